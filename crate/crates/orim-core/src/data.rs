//! Dataset ingestion and synthetic test images.
//!
//! Handwritten-digit corpora arrive as big-endian IDX files (optionally
//! gzipped); single images round-trip through binary PGM. The rotated-digits
//! protocol keeps train and validation sets unrotated and rotates every test
//! image by an independent uniform angle in `[0, 2pi)`.

use crate::transforms::{apply, TransformKind};
use crate::unit_disk::{DiskMode, UnitDiskGrid};
use crate::{OrimError, Result};
use flate2::read::GzDecoder;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::io::Read;
use std::path::Path;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RotationPolicy {
    None,
    /// Every image independently rotated by a uniform angle in `[0, 2pi)`.
    RandomFullTurn { seed: u64 },
}

/// A labeled image set with pixel values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// `[n, M, M]`, row-major within each image.
    pub images: Array3<f64>,
    pub labels: Vec<u8>,
    pub split: Split,
    pub rotation_policy: RotationPolicy,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn side(&self) -> usize {
        self.images.dim().1
    }

    pub fn image(&self, i: usize) -> ndarray::ArrayView2<'_, f64> {
        self.images.index_axis(ndarray::Axis(0), i)
    }
}

/// Read a whole file, transparently gunzipping when the gzip magic leads.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(buf: &[u8], at: usize, path: &Path) -> Result<u32> {
    let bytes: [u8; 4] = buf
        .get(at..at + 4)
        .ok_or_else(|| OrimError::IdxTruncated {
            path: path.display().to_string(),
            expected: at + 4,
            actual: buf.len(),
        })?
        .try_into()
        .unwrap();
    Ok(u32::from_be_bytes(bytes))
}

/// Load an IDX image/label pair into a dataset with pixels scaled to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let ibuf = read_maybe_gz(images_path)?;
    let magic = be_u32(&ibuf, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(OrimError::IdxMagic {
            path: images_path.display().to_string(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(&ibuf, 4, images_path)? as usize;
    let rows = be_u32(&ibuf, 8, images_path)? as usize;
    let cols = be_u32(&ibuf, 12, images_path)? as usize;
    let expected = 16 + n * rows * cols;
    if ibuf.len() < expected {
        return Err(OrimError::IdxTruncated {
            path: images_path.display().to_string(),
            expected,
            actual: ibuf.len(),
        });
    }

    let lbuf = read_maybe_gz(labels_path)?;
    let lmagic = be_u32(&lbuf, 0, labels_path)?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(OrimError::IdxMagic {
            path: labels_path.display().to_string(),
            expected: IDX_LABELS_MAGIC,
            found: lmagic,
        });
    }
    let ln = be_u32(&lbuf, 4, labels_path)? as usize;
    if lbuf.len() < 8 + ln {
        return Err(OrimError::IdxTruncated {
            path: labels_path.display().to_string(),
            expected: 8 + ln,
            actual: lbuf.len(),
        });
    }
    if n != ln {
        return Err(OrimError::IdxCountMismatch {
            images: n,
            labels: ln,
        });
    }

    let mut images = Array3::zeros((n, rows, cols));
    {
        let flat = images.as_slice_mut().unwrap();
        for (dst, &px) in flat.iter_mut().zip(&ibuf[16..expected]) {
            *dst = px as f64 / 255.0;
        }
    }
    Ok(Dataset {
        images,
        labels: lbuf[8..8 + ln].to_vec(),
        split: Split::Train,
        rotation_policy: RotationPolicy::None,
    })
}

/// Write `n` square `u8` images in IDX layout (uncompressed).
pub fn write_idx_images(path: &Path, pixels: &[u8], n: usize, side: usize) -> Result<()> {
    assert_eq!(pixels.len(), n * side * side);
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&(side as u32).to_be_bytes());
    out.extend_from_slice(&(side as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    std::fs::write(path, out)?;
    Ok(())
}

/// Write labels in IDX layout (uncompressed).
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a binary (P5) PGM with values scaled to `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<Array2<f64>> {
    let buf = std::fs::read(path)?;
    let mut pos = 0usize;
    let mut fields = Vec::new();
    // Header: "P5", width, height, maxval, separated by whitespace and
    // optional '#' comment lines.
    while fields.len() < 4 {
        while pos < buf.len() && (buf[pos].is_ascii_whitespace() || buf[pos] == b'#') {
            if buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(OrimError::Pgm("unexpected end of header".into()));
        }
        fields.push(std::str::from_utf8(&buf[start..pos]).map_err(|_| {
            OrimError::Pgm("non-ASCII header".into())
        })?);
    }
    if fields[0] != "P5" {
        return Err(OrimError::Pgm(format!("not a P5 file: {}", fields[0])));
    }
    let width: usize = fields[1]
        .parse()
        .map_err(|_| OrimError::Pgm(format!("bad width {}", fields[1])))?;
    let height: usize = fields[2]
        .parse()
        .map_err(|_| OrimError::Pgm(format!("bad height {}", fields[2])))?;
    let maxval: u32 = fields[3]
        .parse()
        .map_err(|_| OrimError::Pgm(format!("bad maxval {}", fields[3])))?;
    if maxval == 0 || maxval > 255 {
        return Err(OrimError::Pgm(format!("unsupported maxval {maxval}")));
    }
    pos += 1; // single whitespace byte after maxval
    if buf.len() < pos + width * height {
        return Err(OrimError::Pgm(format!(
            "pixel payload truncated: expected {} bytes, found {}",
            width * height,
            buf.len().saturating_sub(pos)
        )));
    }
    let mut img = Array2::zeros((height, width));
    {
        let flat = img.as_slice_mut().unwrap();
        for (dst, &px) in flat.iter_mut().zip(&buf[pos..pos + width * height]) {
            *dst = px as f64 / maxval as f64;
        }
    }
    Ok(img)
}

/// Write a `[0, 1]` image as binary (P5) PGM with maxval 255.
pub fn write_pgm(path: &Path, image: ndarray::ArrayView2<'_, f64>) -> Result<()> {
    let (h, w) = image.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for t in 0..h {
        for s in 0..w {
            out.push((image[[t, s]].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Analytic test-image kinds used by the oracle and invariance suites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthKind {
    ConstantOne,
    /// `O(r, theta) = r^n` on the inscribed disk, zero outside.
    RadialPower(u32),
    /// Unnormalized Gaussian in pixel units, peak 1 at `(cx, cy)`.
    GaussianBlob { cx: f64, cy: f64, sigma: f64 },
    /// Binary checkerboard with `max(1, M/8)`-pixel tiles.
    Checker,
}

/// Sample an analytic image at pixel centers.
pub fn synth_image(kind: SynthKind, m: usize) -> Array2<f64> {
    match kind {
        SynthKind::ConstantOne => Array2::from_elem((m, m), 1.0),
        SynthKind::RadialPower(n) => {
            let grid = UnitDiskGrid::build(m, DiskMode::Inner).expect("m >= 2");
            Array2::from_shape_fn((m, m), |(t, s)| {
                if grid.is_inside(t, s) {
                    grid.radius(t, s).powi(n as i32)
                } else {
                    0.0
                }
            })
        }
        SynthKind::GaussianBlob { cx, cy, sigma } => Array2::from_shape_fn((m, m), |(t, s)| {
            let dx = s as f64 - cx;
            let dy = t as f64 - cy;
            (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        }),
        SynthKind::Checker => {
            let tile = (m / 8).max(1);
            Array2::from_shape_fn((m, m), |(t, s)| ((t / tile + s / tile) % 2) as f64)
        }
    }
}

impl SynthKind {
    /// The same image as a continuous function of disk-polar coordinates,
    /// for quadrature references. `None` for kinds without a smooth analytic
    /// form.
    pub fn analytic_polar(self, m: usize, mode: DiskMode) -> Option<Box<dyn Fn(f64, f64) -> f64>> {
        let d = mode.diameter(m);
        let mf = m as f64;
        match self {
            SynthKind::ConstantOne => Some(Box::new(|_, _| 1.0)),
            SynthKind::RadialPower(n) => Some(Box::new(move |r, _| r.powi(n as i32))),
            SynthKind::GaussianBlob { cx, cy, sigma } => Some(Box::new(move |r, theta| {
                // Pixel column of disk coordinate x: s = (D x + M - 1) / 2.
                let dx = (d * r * theta.cos() + mf - 1.0 - 2.0 * cx) / 2.0;
                let dy = (d * r * theta.sin() + mf - 1.0 - 2.0 * cy) / 2.0;
                (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            })),
            SynthKind::Checker => None,
        }
    }
}

/// Zero-pad each image symmetrically up to `side x side`.
pub fn pad_dataset(ds: &Dataset, side: usize) -> Dataset {
    let (n, h, w) = ds.images.dim();
    assert!(side >= h && side >= w, "padding cannot shrink");
    let off_t = (side - h) / 2;
    let off_s = (side - w) / 2;
    let mut images = Array3::zeros((n, side, side));
    for i in 0..n {
        for t in 0..h {
            for s in 0..w {
                images[[i, off_t + t, off_s + s]] = ds.images[[i, t, s]];
            }
        }
    }
    Dataset {
        images,
        labels: ds.labels.clone(),
        split: ds.split,
        rotation_policy: ds.rotation_policy,
    }
}

/// Rotate every image by an independent uniform angle in `[0, 2pi)`,
/// bilinear about the image center. Deterministic under `seed`.
pub fn make_rotated_split(ds: &Dataset, seed: u64) -> Dataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (n, h, _) = ds.images.dim();
    let mut images = Array3::zeros(ds.images.dim());
    for i in 0..n {
        let alpha = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
        let rotated = apply(ds.image(i), TransformKind::RotateArbitrary(alpha));
        for t in 0..h {
            for s in 0..h {
                images[[i, t, s]] = rotated[[t, s]];
            }
        }
    }
    Dataset {
        images,
        labels: ds.labels.clone(),
        split: ds.split,
        rotation_policy: RotationPolicy::RandomFullTurn { seed },
    }
}

/// Deterministically subsample three disjoint splits from one dataset.
///
/// A seeded permutation assigns the first `train_n` indices to train, the
/// next `val_n` to validation, and the next `test_n` to test. Images are
/// copied; the source is untouched.
pub fn subsample_split(
    ds: &Dataset,
    train_n: usize,
    val_n: usize,
    test_n: usize,
    seed: u64,
) -> (Dataset, Dataset, Dataset) {
    assert!(
        train_n + val_n + test_n <= ds.len(),
        "requested {} samples from a set of {}",
        train_n + val_n + test_n,
        ds.len()
    );
    let mut perm: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for i in (1..perm.len()).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    let take = |range: std::ops::Range<usize>, split: Split| {
        let side = ds.side();
        let mut images = Array3::zeros((range.len(), side, side));
        let mut labels = Vec::with_capacity(range.len());
        for (k, &src) in perm[range].iter().enumerate() {
            images
                .index_axis_mut(ndarray::Axis(0), k)
                .assign(&ds.image(src));
            labels.push(ds.labels[src]);
        }
        Dataset {
            images,
            labels,
            split,
            rotation_policy: RotationPolicy::None,
        }
    };
    (
        take(0..train_n, Split::Train),
        take(train_n..train_n + val_n, Split::Val),
        take(train_n + val_n..train_n + val_n + test_n, Split::Test),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use rand::RngCore;
    use std::io::Write;

    #[test]
    fn idx_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("imgs");
        let lp = dir.path().join("lbls");
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut pixels = vec![0u8; 5 * 9 * 9];
        rng.fill_bytes(&mut pixels);
        let labels: Vec<u8> = (0..5).map(|i| i as u8 * 2).collect();
        write_idx_images(&ip, &pixels, 5, 9).unwrap();
        write_idx_labels(&lp, &labels).unwrap();

        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.side(), 9);
        assert_eq!(ds.labels, labels);
        for (i, &px) in pixels.iter().enumerate() {
            let (img, rest) = (i / 81, i % 81);
            let got = ds.images[[img, rest / 9, rest % 9]];
            assert_eq!(got, px as f64 / 255.0);
        }
    }

    #[test]
    fn gzipped_idx_loads_transparently() {
        let dir = tempfile::tempdir().unwrap();
        let plain_i = dir.path().join("imgs");
        let plain_l = dir.path().join("lbls");
        write_idx_images(&plain_i, &[7u8; 2 * 4 * 4], 2, 4).unwrap();
        write_idx_labels(&plain_l, &[1, 2]).unwrap();

        for name in ["imgs", "lbls"] {
            let src = std::fs::read(dir.path().join(name)).unwrap();
            let gz = std::fs::File::create(dir.path().join(format!("{name}.gz"))).unwrap();
            let mut enc = GzEncoder::new(gz, Compression::default());
            enc.write_all(&src).unwrap();
            enc.finish().unwrap();
        }
        let ds = load_idx(&dir.path().join("imgs.gz"), &dir.path().join("lbls.gz")).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.images[[0, 0, 0]], 7.0 / 255.0);
    }

    #[test]
    fn loader_rejects_bad_magic_truncation_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("imgs");
        let lp = dir.path().join("lbls");
        write_idx_images(&ip, &[0u8; 2 * 4 * 4], 2, 4).unwrap();
        write_idx_labels(&lp, &[0, 1]).unwrap();

        let mut bad = std::fs::read(&ip).unwrap();
        bad[3] = 0x99;
        let bp = dir.path().join("bad");
        std::fs::write(&bp, &bad).unwrap();
        match load_idx(&bp, &lp) {
            Err(OrimError::IdxMagic { found, .. }) => assert_eq!(found, 0x0000_0899),
            other => panic!("expected magic error, got {other:?}"),
        }

        let whole = std::fs::read(&ip).unwrap();
        let tp = dir.path().join("trunc");
        std::fs::write(&tp, &whole[..whole.len() - 3]).unwrap();
        match load_idx(&tp, &lp) {
            Err(OrimError::IdxTruncated {
                expected, actual, ..
            }) => {
                assert_eq!(expected, 16 + 32);
                assert_eq!(actual, 16 + 32 - 3);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }

        let lp3 = dir.path().join("lbls3");
        write_idx_labels(&lp3, &[0, 1, 2]).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp3),
            Err(OrimError::IdxCountMismatch {
                images: 2,
                labels: 3
            })
        ));
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.pgm");
        let img = Array2::from_shape_fn((6, 4), |(t, s)| ((t * 4 + s) as f64) / 23.0);
        write_pgm(&p, img.view()).unwrap();
        let back = read_pgm(&p).unwrap();
        assert_eq!(back.dim(), (6, 4));
        for (a, b) in img.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn pgm_rejects_malformed_headers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        std::fs::write(&p, b"P2\n2 2\n255\n").unwrap();
        assert!(matches!(read_pgm(&p), Err(OrimError::Pgm(_))));
        std::fs::write(&p, b"P5\n4 4\n255\nshort").unwrap();
        assert!(matches!(read_pgm(&p), Err(OrimError::Pgm(_))));
    }

    #[test]
    fn synth_examples() {
        let ones = synth_image(SynthKind::ConstantOne, 5);
        assert!(ones.iter().all(|&v| v == 1.0));

        // Center pixel of an odd grid sits at radius zero.
        let r2 = synth_image(SynthKind::RadialPower(2), 7);
        assert_eq!(r2[[3, 3]], 0.0);

        let blob = synth_image(
            SynthKind::GaussianBlob {
                cx: 4.0,
                cy: 2.0,
                sigma: 1.5,
            },
            8,
        );
        assert_eq!(blob[[2, 4]], 1.0);
        assert!(blob.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn rotated_split_is_deterministic_and_label_preserving() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let images = Array3::from_shape_fn((6, 16, 16), |_| rng.gen::<f64>());
        let ds = Dataset {
            images,
            labels: vec![0, 1, 2, 0, 1, 2],
            split: Split::Test,
            rotation_policy: RotationPolicy::None,
        };
        let a = make_rotated_split(&ds, 7);
        let b = make_rotated_split(&ds, 7);
        assert_eq!(a.labels, ds.labels);
        assert_eq!(a.images.dim(), ds.images.dim());
        for (x, y) in a.images.iter().zip(b.images.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let c = make_rotated_split(&ds, 8);
        assert!(a.images.iter().zip(c.images.iter()).any(|(x, y)| x != y));
    }

    #[test]
    fn padding_centers_content() {
        let mut images = Array3::zeros((1, 2, 2));
        images[[0, 0, 0]] = 1.0;
        images[[0, 1, 1]] = 0.5;
        let ds = Dataset {
            images,
            labels: vec![3],
            split: Split::Train,
            rotation_policy: RotationPolicy::None,
        };
        let out = pad_dataset(&ds, 4);
        assert_eq!(out.images.dim(), (1, 4, 4));
        assert_eq!(out.images[[0, 1, 1]], 1.0);
        assert_eq!(out.images[[0, 2, 2]], 0.5);
        assert_eq!(out.images.sum(), 1.5);
    }

    #[test]
    fn subsample_split_is_disjoint_and_seed_stable() {
        let images = Array3::from_shape_fn((30, 4, 4), |(i, t, s)| (i * 16 + t * 4 + s) as f64);
        let ds = Dataset {
            images,
            labels: (0..30).map(|i| (i % 10) as u8).collect(),
            split: Split::Train,
            rotation_policy: RotationPolicy::None,
        };
        let (tr, va, te) = subsample_split(&ds, 15, 5, 10, 42);
        assert_eq!((tr.len(), va.len(), te.len()), (15, 5, 10));
        // First pixel identifies the source image; all 30 must appear once.
        let mut seen: Vec<usize> = tr
            .images
            .outer_iter()
            .chain(va.images.outer_iter())
            .chain(te.images.outer_iter())
            .map(|img| (img[[0, 0]] as usize) / 16)
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..30).collect::<Vec<_>>());

        let (tr2, _, _) = subsample_split(&ds, 15, 5, 10, 42);
        assert_eq!(tr.labels, tr2.labels);
    }
}
