//! Slow reference convolutions, written from first principles.
//!
//! Nothing here reuses the production group tables: group elements are
//! (rotation count, mirror bit) pairs with composition done by the dihedral
//! relations directly, and the convolutions are literal nested loops. Small
//! inputs only; the point is to catch any indexing or composition slip in the
//! fast path.

use crate::layers::{Map4, Pad};
use ndarray::{Array4, Array5, ArrayView2};

/// Dihedral element r^j m^s with j quarter turns counterclockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dihedral {
    pub j: i32,
    pub s: bool,
}

impl Dihedral {
    pub fn from_index(i: usize) -> Self {
        Dihedral {
            j: (i % 4) as i32,
            s: i >= 4,
        }
    }

    pub fn to_index(self) -> usize {
        (self.j.rem_euclid(4)) as usize + if self.s { 4 } else { 0 }
    }

    /// m r^j = r^{-j} m, so r^{j1} m^{s1} r^{j2} m^{s2}
    /// = r^{j1 + (-1)^{s1} j2} m^{s1 xor s2}.
    pub fn compose(self, other: Dihedral) -> Dihedral {
        let j2 = if self.s { -other.j } else { other.j };
        Dihedral {
            j: (self.j + j2).rem_euclid(4),
            s: self.s ^ other.s,
        }
    }

    pub fn inverse(self) -> Dihedral {
        if self.s {
            self
        } else {
            Dihedral {
                j: (-self.j).rem_euclid(4),
                s: false,
            }
        }
    }

    /// Apply to a plane offset in right-handed (x east, y north) coordinates.
    pub fn act(self, (x, y): (i32, i32)) -> (i32, i32) {
        let (mut x, mut y) = if self.s { (-x, y) } else { (x, y) };
        for _ in 0..self.j.rem_euclid(4) {
            let (nx, ny) = (-y, x);
            x = nx;
            y = ny;
        }
        (x, y)
    }
}

fn out_side(side: usize, k: usize, pad: Pad) -> usize {
    match pad {
        Pad::Same => side,
        Pad::Valid => side - k + 1,
    }
}

fn pixel_at(x: ArrayView2<'_, f64>, t: i64, s: i64) -> f64 {
    let (h, w) = x.dim();
    if t < 0 || s < 0 || t >= h as i64 || s >= w as i64 {
        0.0
    } else {
        x[[t as usize, s as usize]]
    }
}

/// Offset (dy rows down, dx columns right) reached from a filter tap after
/// the element acts on the tap's position relative to the filter center.
fn moved_tap(u: Dihedral, k: usize, dy: usize, dx: usize) -> (i64, i64) {
    let c = (k / 2) as i32;
    let (x, y) = (dx as i32 - c, c - dy as i32);
    let (ax, ay) = u.act((x, y));
    ((c - ay) as i64, (ax + c) as i64)
}

/// Literal lift convolution: out(z, u) = sum_tau in(z + u tau) phi(tau).
///
/// `theta_len` is 1, 4, or 8; filters are [k, k, c_in, c_out].
pub fn brute_lift_conv(
    input: &Map4,
    filters: &Array4<f64>,
    theta_len: usize,
    pad: Pad,
) -> Map4 {
    let (h, w, t_in, c_in) = input.dim();
    assert_eq!(t_in, 1, "lift input has a single slice");
    assert!(h <= 8 && w <= 8 && c_in <= 3, "oracle is for small cases");
    let (k, k2, fc_in, c_out) = filters.dim();
    assert_eq!(k, k2);
    assert_eq!(fc_in, c_in);
    let (oh, ow) = (out_side(h, k, pad), out_side(w, k, pad));
    let shift = match pad {
        Pad::Same => -((k / 2) as i64),
        Pad::Valid => 0,
    };
    let mut out = Map4::zeros((oh, ow, theta_len, c_out));
    for t in 0..oh {
        for s in 0..ow {
            for ui in 0..theta_len {
                let u = Dihedral::from_index(ui);
                for co in 0..c_out {
                    let mut acc = 0.0;
                    for dy in 0..k {
                        for dx in 0..k {
                            let (mt, ms) = moved_tap(u, k, dy, dx);
                            let it = t as i64 + shift + mt;
                            let is = s as i64 + shift + ms;
                            for ci in 0..c_in {
                                acc += pixel_at(
                                    input
                                        .index_axis(ndarray::Axis(3), ci)
                                        .index_axis(ndarray::Axis(2), 0),
                                    it,
                                    is,
                                ) * filters[[dy, dx, ci, co]];
                            }
                        }
                    }
                    out[[t, s, ui, co]] = acc;
                }
            }
        }
    }
    out
}

/// Literal group convolution:
/// out(z, u) = sum_{tau, h} in(z + u tau, u h) phi(h, tau).
///
/// Filters are [k, k, theta, c_in, c_out], indexed by h on axis 2.
pub fn brute_group_conv(
    input: &Map4,
    filters: &Array5<f64>,
    pad: Pad,
) -> Map4 {
    let (ih, iw, t_len, c_in) = input.dim();
    assert!(ih <= 8 && iw <= 8 && c_in <= 3, "oracle is for small cases");
    let (k, k2, ft, fc_in, c_out) = filters.dim();
    assert_eq!(k, k2);
    assert_eq!(ft, t_len);
    assert_eq!(fc_in, c_in);
    let (oh, ow) = (out_side(ih, k, pad), out_side(iw, k, pad));
    let shift = match pad {
        Pad::Same => -((k / 2) as i64),
        Pad::Valid => 0,
    };
    let mut out = Map4::zeros((oh, ow, t_len, c_out));
    for t in 0..oh {
        for s in 0..ow {
            for ui in 0..t_len {
                let u = Dihedral::from_index(ui);
                for co in 0..c_out {
                    let mut acc = 0.0;
                    for dy in 0..k {
                        for dx in 0..k {
                            let (mt, ms) = moved_tap(u, k, dy, dx);
                            let it = t as i64 + shift + mt;
                            let is = s as i64 + shift + ms;
                            for hi in 0..t_len {
                                let uh = u.compose(Dihedral::from_index(hi)).to_index();
                                for ci in 0..c_in {
                                    let v = pixel_at(
                                        input
                                            .index_axis(ndarray::Axis(3), ci)
                                            .index_axis(ndarray::Axis(2), uh),
                                        it,
                                        is,
                                    );
                                    acc += v * filters[[dy, dx, hi, ci, co]];
                                }
                            }
                        }
                    }
                    out[[t, s, ui, co]] = acc;
                }
            }
        }
    }
    out
}
