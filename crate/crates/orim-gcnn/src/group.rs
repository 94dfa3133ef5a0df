//! The symmetry groups acting on square feature maps.
//!
//! Elements are integer 2x2 matrices acting on centered spatial coordinates,
//! so every action on pixel indices and filter taps is exact. Composition and
//! inversion go through the matrices; the cached tables are derived, then
//! verified exhaustively by the axiom tests.

use crate::{GcnnError, Result};

/// Row-major integer 2x2 matrix; acts on column vectors `(x, y)` with x
/// rightward and y upward.
pub type Mat2 = [[i32; 2]; 2];

const IDENTITY: Mat2 = [[1, 0], [0, 1]];
/// Quarter turn counterclockwise: `(x, y) -> (-y, x)`.
const ROT: Mat2 = [[0, -1], [1, 0]];
/// Mirror across the vertical axis: `(x, y) -> (-x, y)`.
const MIRROR: Mat2 = [[-1, 0], [0, 1]];

fn mat_mul(a: Mat2, b: Mat2) -> Mat2 {
    let mut out = [[0; 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn mat_apply(a: Mat2, v: (i32, i32)) -> (i32, i32) {
    (
        a[0][0] * v.0 + a[0][1] * v.1,
        a[1][0] * v.0 + a[1][1] * v.1,
    )
}

/// Adjugate divided by the determinant; all our matrices have det = +-1.
fn mat_inv(a: Mat2) -> Mat2 {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    debug_assert!(det == 1 || det == -1);
    let adj = [[a[1][1], -a[0][1]], [-a[1][0], a[0][0]]];
    if det == 1 {
        adj
    } else {
        [
            [-adj[0][0], -adj[0][1]],
            [-adj[1][0], -adj[1][1]],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupKind {
    /// Translations only: the trivial one-element point group.
    Z2,
    /// Four quarter-turn rotations.
    P4,
    /// Four rotations times an optional mirror.
    P4M,
}

impl GroupKind {
    pub fn order(self) -> usize {
        match self {
            GroupKind::Z2 => 1,
            GroupKind::P4 => 4,
            GroupKind::P4M => 8,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            GroupKind::Z2 => "z2",
            GroupKind::P4 => "p4",
            GroupKind::P4M => "p4m",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "z2" => Some(GroupKind::Z2),
            "p4" => Some(GroupKind::P4),
            "p4m" => Some(GroupKind::P4M),
            _ => None,
        }
    }
}

/// A concrete point group with cached composition and inverse tables.
#[derive(Debug, Clone)]
pub struct Group {
    kind: GroupKind,
    elems: Vec<Mat2>,
    compose: Vec<Vec<usize>>,
    inverse: Vec<usize>,
}

impl Group {
    pub fn new(kind: GroupKind) -> Self {
        // Index layout: j + 4s for rotation count j and mirror flag s, so
        // indices 0..4 are the rotation subgroup shared with P4.
        let mut elems = vec![IDENTITY];
        if kind != GroupKind::Z2 {
            for j in 1..4 {
                elems.push(mat_mul(ROT, elems[j - 1]));
            }
        }
        if kind == GroupKind::P4M {
            for j in 0..4 {
                elems.push(mat_mul(elems[j], MIRROR));
            }
        }
        let n = elems.len();
        let index_of = |m: Mat2| -> usize {
            elems
                .iter()
                .position(|&e| e == m)
                .expect("closed under composition")
        };
        let compose = (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| index_of(mat_mul(elems[a], elems[b])))
                    .collect()
            })
            .collect();
        let inverse = (0..n).map(|a| index_of(mat_inv(elems[a]))).collect();
        Group {
            kind,
            elems,
            compose,
            inverse,
        }
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn order(&self) -> usize {
        self.elems.len()
    }

    pub fn identity(&self) -> usize {
        0
    }

    /// Index of `a * b` (apply `b` first).
    pub fn compose(&self, a: usize, b: usize) -> usize {
        self.compose[a][b]
    }

    pub fn inverse(&self, a: usize) -> usize {
        self.inverse[a]
    }

    pub fn matrix(&self, a: usize) -> Mat2 {
        self.elems[a]
    }

    /// Apply element `a` to a centered integer offset (filter tap).
    pub fn act_offset(&self, a: usize, offset: (i32, i32)) -> (i32, i32) {
        mat_apply(self.elems[a], offset)
    }

    /// Permutation of the theta axis under `[L_u f](v) = f(u^-1 v)`:
    /// `perm[v]` is the source slice for destination slice `v`.
    pub fn theta_permutation(&self, u: usize) -> Vec<usize> {
        let inv = self.inverse(u);
        (0..self.order()).map(|v| self.compose(inv, v)).collect()
    }

    /// Map a pixel index `(t, s)` of an `m x m` grid under element `a`,
    /// exactly, via doubled centered coordinates `x = 2s - (m-1)`,
    /// `y = (m-1) - 2t`.
    pub fn act_pixel(&self, a: usize, m: usize, t: usize, s: usize) -> (usize, usize) {
        let span = m as i32 - 1;
        let x = 2 * s as i32 - span;
        let y = span - 2 * t as i32;
        let (xr, yr) = mat_apply(self.elems[a], (x, y));
        debug_assert!((xr + span) % 2 == 0 && (span - yr) % 2 == 0);
        (((span - yr) / 2) as usize, ((xr + span) / 2) as usize)
    }

    /// Check that an element can act on an `h x w` map without leaving the
    /// index range: non-trivial rotations need square maps.
    pub fn check_spatial(&self, a: usize, h: usize, w: usize) -> Result<()> {
        let m = self.elems[a];
        let swaps_axes = m[0][1] != 0;
        if swaps_axes && h != w {
            return Err(GcnnError::ShapeMismatch {
                got: vec![h, w],
                want: "square map for rotation actions".to_string(),
            });
        }
        Ok(())
    }
}
