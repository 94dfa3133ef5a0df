//! Implementations of the subcommands.

use crate::report::{self, SCHEMA};
use crate::{CliError, CliResult, DiskArg, FamilyArg, OptimizerArg, SuiteArg, VariantArg};
use ndarray::Array2;
use orim_core::basis::{radial_eval, Family, MomentBasis, MomentSpec};
use orim_core::data::{self, synth_image, Dataset, SynthKind};
use orim_core::moments::{compute_central_moments, compute_moments};
use orim_core::oracle::{enumerate_pairs_brute, exact_radial_eval, quadrature_moment};
use orim_core::transforms::{
    check_reflection_relation, check_rotation_relation, check_translation_invariance, ShiftOutcome,
};
use orim_core::unit_disk::{DiskMode, UnitDiskGrid};
use orim_gcnn::model::{build_model, Model, ModelConfig, Variant};
use orim_gcnn::train::{
    evaluate, metrics_to_csv, train_with_progress, OptimizerKind, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

fn disk_name(disk: DiskArg) -> &'static str {
    match disk {
        DiskArg::Inner => "inner",
        DiskArg::Outer => "outer",
    }
}

fn optimizer_name(opt: OptimizerArg) -> &'static str {
    match opt {
        OptimizerArg::Adam => "adam",
        OptimizerArg::SgdMomentum => "sgd-momentum",
    }
}

fn variant_name(v: &Variant) -> &'static str {
    match v {
        Variant::GcnnOrim { .. } => "gcnn-orim",
        Variant::GcnnFlatten => "gcnn-flatten",
        Variant::CnnFlatten => "cnn-flatten",
    }
}

pub fn basis_export(
    family: FamilyArg,
    pmax: u32,
    size: usize,
    disk: DiskArg,
    out: &Path,
) -> CliResult<()> {
    let spec = MomentSpec::new(family.family(), pmax)?;
    let grid = UnitDiskGrid::build(size, disk.mode())?;
    let basis = MomentBasis::build(spec, &grid)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            report::create_dir(parent)?;
        }
    }
    let file = std::fs::File::create(out).map_err(|e| report::io_err(out, &e))?;
    let mut w = std::io::BufWriter::new(file);
    basis
        .write_to(&mut w)
        .map_err(|e| report::core_err_at(out, e))?;
    w.flush().map_err(|e| report::io_err(out, &e))?;
    eprintln!(
        "wrote {}: {} {} pairs over {} masked pixels at M={}",
        out.display(),
        family.code(),
        basis.pairs().len(),
        basis.masked_pixel_indices().len(),
        size,
    );
    Ok(())
}

pub fn compute(
    image_path: &Path,
    family: FamilyArg,
    pmax: u32,
    central: bool,
    disk: DiskArg,
    report_path: Option<&Path>,
) -> CliResult<()> {
    report::require_file(image_path)?;
    let image = data::read_pgm(image_path).map_err(|e| report::core_err_at(image_path, e))?;
    let (rows, cols) = image.dim();
    if rows != cols {
        return Err(CliError::Validation(format!(
            "{}: image is {rows}x{cols}, moments need a square image",
            image_path.display()
        )));
    }
    let spec = MomentSpec::new(family.family(), pmax)?;
    let mv = if central {
        compute_central_moments(image.view(), spec, disk.mode())?
    } else {
        let grid = UnitDiskGrid::build(rows, disk.mode())?;
        let basis = MomentBasis::build(spec, &grid)?;
        compute_moments(image.view(), &basis)?
    };
    let coefficients: Vec<serde_json::Value> = mv
        .pairs
        .iter()
        .zip(&mv.values)
        .map(|(&(p, q), v)| {
            serde_json::json!({
                "p": p,
                "q": q,
                "re": v.re,
                "im": v.im,
                "magnitude": v.norm(),
            })
        })
        .collect();
    report::emit_json(
        report_path,
        &serde_json::json!({
            "schema": SCHEMA,
            "kind": "moments",
            "image": image_path.display().to_string(),
            "family": family.code(),
            "p_max": pmax,
            "size": rows,
            "central": central,
            "disk": disk_name(disk),
            "coefficients": coefficients,
        }),
    )
}

struct CheckRow {
    name: String,
    cases: usize,
    skipped: usize,
    worst: f64,
    tolerance: f64,
}

impl CheckRow {
    fn pass(&self) -> bool {
        self.worst <= self.tolerance
    }

    fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "name": self.name,
            "cases": self.cases,
            "skipped": self.skipped,
            "max_relative_residual": self.worst,
            "tolerance": self.tolerance,
            "pass": self.pass(),
        })
    }
}

/// Compact asymmetric test image: two offset blobs, mass well inside the
/// inscribed disk so every q >= 1 coefficient is far from zero.
fn two_blob(m: usize) -> Array2<f64> {
    let s = m as f64;
    let a = synth_image(
        SynthKind::GaussianBlob {
            cx: 0.47 * s,
            cy: 0.50 * s,
            sigma: s / 16.0,
        },
        m,
    );
    let b = synth_image(
        SynthKind::GaussianBlob {
            cx: 0.57 * s,
            cy: 0.56 * s,
            sigma: s / 20.0,
        },
        m,
    );
    &a + &(0.5 * &b)
}

fn random_image(m: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Array2::from_shape_fn((m, m), |_| rng.gen::<f64>())
}

fn rotation_reflection_corpus(size: usize) -> Vec<(String, Array2<f64>)> {
    vec![
        ("two-blob".into(), two_blob(size)),
        ("checker".into(), synth_image(SynthKind::Checker, size)),
        (
            "radial-power".into(),
            synth_image(SynthKind::RadialPower(2), size),
        ),
        ("random".into(), random_image(size, 7)),
    ]
}

fn rotation_check(family: Family, pmax: u32, size: usize) -> CliResult<CheckRow> {
    let spec = MomentSpec::new(family, pmax)?;
    let grid = UnitDiskGrid::build(size, DiskMode::Inner)?;
    let basis = MomentBasis::build(spec, &grid)?;
    let quarter = std::f64::consts::PI / 2.0;
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (_, image) in rotation_reflection_corpus(size) {
        for k in 1..4u32 {
            let check = check_rotation_relation(image.view(), quarter * k as f64, &basis)?;
            worst = worst.max(check.max_relative_residual());
            cases += 1;
        }
    }
    Ok(CheckRow {
        name: "rotation-quarter-turns".into(),
        cases,
        skipped: 0,
        worst,
        tolerance: 1e-9,
    })
}

fn reflection_check(family: Family, pmax: u32, size: usize) -> CliResult<CheckRow> {
    let spec = MomentSpec::new(family, pmax)?;
    let grid = UnitDiskGrid::build(size, DiskMode::Inner)?;
    let basis = MomentBasis::build(spec, &grid)?;
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (_, image) in rotation_reflection_corpus(size) {
        let check = check_reflection_relation(image.view(), &basis)?;
        worst = worst.max(check.max_relative_residual());
        cases += 1;
    }
    Ok(CheckRow {
        name: "reflection-conjugation".into(),
        cases,
        skipped: 0,
        worst,
        tolerance: 1e-9,
    })
}

fn translation_check(family: Family, pmax: u32, size: usize) -> CliResult<CheckRow> {
    let spec = MomentSpec::new(family, pmax)?;
    let shifts: [(i64, i64); 5] = [(2, 0), (0, 2), (-3, 1), (3, 3), (-2, -2)];
    let mut worst = 0.0f64;
    let mut cases = 0;
    let mut skipped = 0;
    // Both images are asymmetric composites: a lone blob is rotationally
    // symmetric about its centroid, which zeroes every q >= 1 coefficient
    // and leaves nothing meaningful to compare.
    let s = size as f64;
    let second = &synth_image(
        SynthKind::GaussianBlob {
            cx: 0.50 * s,
            cy: 0.42 * s,
            sigma: s / 18.0,
        },
        size,
    ) + &(0.7
        * &synth_image(
            SynthKind::GaussianBlob {
                cx: 0.44 * s,
                cy: 0.55 * s,
                sigma: s / 22.0,
            },
            size,
        ));
    let images = [two_blob(size), second];
    for image in &images {
        for outcome in check_translation_invariance(image.view(), &shifts, spec)? {
            match outcome {
                ShiftOutcome::Deviation(d) => {
                    worst = worst.max(d);
                    cases += 1;
                }
                ShiftOutcome::Unsupported => skipped += 1,
            }
        }
    }
    if cases == 0 {
        return Err(CliError::Validation(
            "translation corpus left no supported shift; enlarge --size".into(),
        ));
    }
    Ok(CheckRow {
        name: "translation-central-magnitudes".into(),
        cases,
        skipped,
        worst,
        tolerance: 1e-3,
    })
}

fn radial_oracle_check(family: Family, pmax: u32) -> CheckRow {
    let cap = pmax.min(10);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (p, q) in enumerate_pairs_brute(family, cap, true) {
        let mut scale = 0.0f64;
        let mut gap = 0.0f64;
        for i in 0..100 {
            let r = (i as f64 + 0.5) / 100.0;
            let exact = exact_radial_eval(family, p, q as i32, r);
            let fast = radial_eval(family, p, q as i32, r).expect("radius in range");
            scale = scale.max(exact.abs());
            gap = gap.max((fast - exact).abs());
        }
        worst = worst.max(gap / scale.max(f64::MIN_POSITIVE));
        cases += 1;
    }
    CheckRow {
        name: "radial-vs-exact-rational".into(),
        cases,
        skipped: 0,
        worst,
        tolerance: 1e-10,
    }
}

fn pair_count_check(family: Family, pmax: u32) -> CliResult<CheckRow> {
    let spec = MomentSpec::new(family, pmax)?;
    let formula = MomentSpec::pair_count(family, pmax) as usize;
    let enumerated = enumerate_pairs_brute(family, pmax, false);
    let listed = spec.pairs();
    let mismatch = (listed.len() != formula) as usize + (listed != enumerated) as usize;
    Ok(CheckRow {
        name: "pair-enumeration".into(),
        cases: listed.len(),
        skipped: 0,
        worst: mismatch as f64,
        tolerance: 0.0,
    })
}

fn quadrature_oracle_check(family: Family, pmax: u32) -> CliResult<CheckRow> {
    // Fixed geometry independent of --size: a compact blob at M = 128.
    // Fourier-Mellin radial polynomials oscillate hardest near the origin,
    // where a pixel grid is coarsest relative to the kernel variation, so
    // that family converges more slowly and gets a wider band.
    let m = 128usize;
    let (cap, tolerance) = match family {
        Family::Zernike => (pmax.min(9), 1e-2),
        Family::PseudoZernike => (pmax.min(5), 1e-2),
        Family::FourierMellin => (pmax.min(5), 5e-2),
    };
    let kind = SynthKind::GaussianBlob {
        cx: 0.5625 * m as f64,
        cy: 0.453125 * m as f64,
        sigma: m as f64 / 8.0,
    };
    let polar = kind
        .analytic_polar(m, DiskMode::Inner)
        .expect("blob has an analytic polar form");
    let spec = MomentSpec::with_q_zero(family, cap, true)?;
    let grid = UnitDiskGrid::build(m, DiskMode::Inner)?;
    let basis = MomentBasis::build(spec, &grid)?;
    let mv = compute_moments(synth_image(kind, m).view(), &basis)?;

    let mut scale = 0.0f64;
    let mut gap = 0.0f64;
    let mut cases = 0;
    for (i, &(p, q)) in mv.pairs.iter().enumerate() {
        let oracle = quadrature_moment(polar.as_ref(), family, p, q as i32, 512, 2048);
        scale = scale.max(oracle.value.norm());
        gap = gap.max((mv.values[i] - oracle.value).norm());
        cases += 1;
    }
    Ok(CheckRow {
        name: "quadrature-blob-m128".into(),
        cases,
        skipped: 0,
        worst: gap / scale.max(f64::MIN_POSITIVE),
        tolerance,
    })
}

pub fn verify(
    suite: SuiteArg,
    family: FamilyArg,
    pmax: u32,
    size: usize,
    with_oracles: bool,
    report_path: Option<&Path>,
) -> CliResult<()> {
    let fam = family.family();
    let mut checks: Vec<CheckRow> = Vec::new();
    if matches!(suite, SuiteArg::Rotation | SuiteArg::All) {
        checks.push(rotation_check(fam, pmax, size)?);
    }
    if matches!(suite, SuiteArg::Reflection | SuiteArg::All) {
        checks.push(reflection_check(fam, pmax, size)?);
    }
    if matches!(suite, SuiteArg::Translation | SuiteArg::All) {
        checks.push(translation_check(fam, pmax, size)?);
    }
    if with_oracles {
        checks.push(radial_oracle_check(fam, pmax));
        checks.push(pair_count_check(fam, pmax)?);
        checks.push(quadrature_oracle_check(fam, pmax)?);
    }

    let mut failed: Vec<String> = Vec::new();
    for c in &checks {
        eprintln!(
            "check {:32} cases {:3} worst {:10.3e} tol {:8.1e} {}",
            c.name,
            c.cases,
            c.worst,
            c.tolerance,
            if c.pass() { "pass" } else { "FAIL" },
        );
        if !c.pass() {
            failed.push(c.name.clone());
        }
    }

    report::emit_json(
        report_path,
        &serde_json::json!({
            "schema": SCHEMA,
            "kind": "verify",
            "suite": suite_name(suite),
            "family": family.code(),
            "p_max": pmax,
            "size": size,
            "with_oracles": with_oracles,
            "checks": checks.iter().map(CheckRow::to_json).collect::<Vec<_>>(),
            "pass": failed.is_empty(),
        }),
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "verification failed: {}",
            failed.join(", ")
        )))
    }
}

fn suite_name(suite: SuiteArg) -> &'static str {
    match suite {
        SuiteArg::Rotation => "rotation",
        SuiteArg::Reflection => "reflection",
        SuiteArg::Translation => "translation",
        SuiteArg::All => "all",
    }
}

fn resolve_data_dir(flag: Option<PathBuf>) -> CliResult<PathBuf> {
    if let Some(dir) = flag {
        return Ok(dir);
    }
    match std::env::var("ORIM_DATA_DIR") {
        Ok(v) if !v.is_empty() => Ok(PathBuf::from(v)),
        _ => Err(CliError::Validation(
            "no dataset directory: pass --data or set ORIM_DATA_DIR".into(),
        )),
    }
}

fn idx_pair(dir: &Path) -> CliResult<(PathBuf, PathBuf)> {
    report::require_dir(dir)?;
    let find = |names: &[&str]| -> CliResult<PathBuf> {
        names
            .iter()
            .map(|n| dir.join(n))
            .find(|p| p.is_file())
            .ok_or_else(|| CliError::Io {
                path: dir.join(names[0]).display().to_string(),
                message: "no such file".into(),
            })
    };
    Ok((
        find(&["images-idx3-ubyte.gz", "images-idx3-ubyte"])?,
        find(&["labels-idx1-ubyte.gz", "labels-idx1-ubyte"])?,
    ))
}

fn load_data(dir: &Path) -> CliResult<Dataset> {
    let (images, labels) = idx_pair(dir)?;
    data::load_idx(&images, &labels).map_err(|e| report::core_err_at(&images, e))
}

fn pad_to(ds: &Dataset, side: usize) -> CliResult<Dataset> {
    if ds.side() > side {
        return Err(CliError::Validation(format!(
            "dataset images are {0}x{0} but the model takes {side}x{side}",
            ds.side()
        )));
    }
    Ok(if ds.side() == side {
        ds.clone()
    } else {
        data::pad_dataset(ds, side)
    })
}

pub struct TrainArgs {
    pub variant: VariantArg,
    pub family: FamilyArg,
    pub pmax: u32,
    pub central: bool,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: OptimizerArg,
    pub seed: u64,
    pub train_n: usize,
    pub val_n: usize,
    pub test_n: usize,
    pub upright_test: bool,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn train(args: TrainArgs) -> CliResult<()> {
    if args.epochs == 0 || args.batch == 0 {
        return Err(CliError::Validation(
            "--epochs and --batch must be at least 1".into(),
        ));
    }
    if !(args.lr.is_finite() && args.lr > 0.0) {
        return Err(CliError::Validation("--lr must be positive".into()));
    }
    let data_dir = resolve_data_dir(args.data)?;
    let pool = load_data(&data_dir)?;
    let want = args.train_n + args.val_n + args.test_n;
    if args.train_n == 0 || args.val_n == 0 || args.test_n == 0 {
        return Err(CliError::Validation(
            "--train-n, --val-n, and --test-n must be at least 1".into(),
        ));
    }
    if want > pool.len() {
        return Err(CliError::Validation(format!(
            "splits need {want} samples but the dataset holds {}",
            pool.len()
        )));
    }

    let side = 32usize;
    let classes = pool
        .labels
        .iter()
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(10)
        .max(10);
    let pool = pad_to(&pool, side)?;
    let (train_set, val_set, test_set) =
        data::subsample_split(&pool, args.train_n, args.val_n, args.test_n, args.seed);
    let test_set = if args.upright_test {
        test_set
    } else {
        data::make_rotated_split(&test_set, args.seed)
    };

    let variant = match args.variant {
        VariantArg::GcnnOrim => Variant::GcnnOrim {
            family: args.family.code().to_string(),
            p_max: args.pmax,
            central: args.central,
        },
        VariantArg::GcnnFlatten => Variant::GcnnFlatten,
        VariantArg::CnnFlatten => Variant::CnnFlatten,
    };
    let config = ModelConfig {
        variant: variant.clone(),
        side,
        classes,
        seed: args.seed,
    };
    let mut model = build_model(config)?;
    eprintln!(
        "training {} ({} parameters) on {} train / {} val / {} {} test",
        variant_name(&variant),
        model.param_count(),
        train_set.len(),
        val_set.len(),
        test_set.len(),
        if args.upright_test { "upright" } else { "rotated" },
    );

    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        learning_rate: args.lr,
        optimizer: match args.optimizer {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::SgdMomentum => OptimizerKind::SgdMomentum,
        },
        seed: args.seed,
    };
    let started = Instant::now();
    let outcome = train_with_progress(&mut model, &cfg, &train_set, &val_set, |row| {
        eprintln!(
            "epoch {:3} {:5} loss {:.4} accuracy {:.4}",
            row.epoch, row.split, row.loss, row.accuracy
        );
    })?;
    let test_report = evaluate(&model, &test_set, classes)?;
    let wall = started.elapsed().as_secs_f64();
    eprintln!(
        "test loss {:.4} accuracy {:.4} after {:.1}s",
        test_report.loss, test_report.accuracy, wall
    );

    report::create_dir(&args.out)?;
    let metrics_path = args.out.join("metrics.csv");
    report::write_text(&metrics_path, &metrics_to_csv(&outcome.rows))?;
    let checkpoint_dir = args.out.join("checkpoint");
    model
        .save_checkpoint(&checkpoint_dir)
        .map_err(|e| report::gcnn_err_at(&checkpoint_dir, e))?;

    let (family_json, pmax_json, central_json) = match &variant {
        Variant::GcnnOrim {
            family,
            p_max,
            central,
        } => (
            serde_json::json!(family),
            serde_json::json!(p_max),
            serde_json::json!(central),
        ),
        _ => (
            serde_json::Value::Null,
            serde_json::Value::Null,
            serde_json::Value::Null,
        ),
    };
    let summary = serde_json::json!({
        "schema": SCHEMA,
        "kind": "train-summary",
        "variant": variant_name(&variant),
        "family": family_json,
        "p_max": pmax_json,
        "central": central_json,
        "side": side,
        "classes": classes,
        "seed": args.seed,
        "optimizer": optimizer_name(args.optimizer),
        "epochs": args.epochs,
        "batch_size": args.batch,
        "learning_rate": args.lr,
        "train_n": args.train_n,
        "val_n": args.val_n,
        "test_n": args.test_n,
        "rotated_test": !args.upright_test,
        "param_count": model.param_count(),
        "best_epoch": outcome.best_epoch,
        "best_val_accuracy": outcome.best_val_accuracy,
        "test_loss": test_report.loss,
        "test_accuracy": test_report.accuracy,
        "wall_seconds": wall,
    });
    let summary_path = args.out.join("summary.json");
    report::emit_json(Some(&summary_path), &summary)?;
    eprintln!(
        "wrote {}, {}, {}",
        metrics_path.display(),
        summary_path.display(),
        checkpoint_dir.display(),
    );
    Ok(())
}

pub fn eval(
    checkpoint: &Path,
    n: usize,
    rotate: bool,
    seed: u64,
    data_flag: Option<PathBuf>,
    report_path: Option<&Path>,
) -> CliResult<()> {
    report::require_dir(checkpoint)?;
    report::require_file(&checkpoint.join("manifest.json"))?;
    let model =
        Model::load_checkpoint(checkpoint).map_err(|e| report::gcnn_err_at(checkpoint, e))?;
    let data_dir = resolve_data_dir(data_flag)?;
    let pool = load_data(&data_dir)?;
    if n == 0 {
        return Err(CliError::Validation("--n must be at least 1".into()));
    }
    if n > pool.len() {
        return Err(CliError::Validation(format!(
            "--n {n} exceeds the dataset size {}",
            pool.len()
        )));
    }
    let pool = pad_to(&pool, model.config.side)?;
    let (_, _, subset) = data::subsample_split(&pool, 0, 0, n, seed);
    let subset = if rotate {
        data::make_rotated_split(&subset, seed)
    } else {
        subset
    };
    let classes = model.config.classes;
    let report_data = evaluate(&model, &subset, classes)?;
    eprintln!(
        "eval {}: loss {:.4} accuracy {:.4} on {} {} images",
        variant_name(&model.config.variant),
        report_data.loss,
        report_data.accuracy,
        n,
        if rotate { "rotated" } else { "upright" },
    );
    report::emit_json(
        report_path,
        &serde_json::json!({
            "schema": SCHEMA,
            "kind": "eval",
            "checkpoint": checkpoint.display().to_string(),
            "variant": variant_name(&model.config.variant),
            "n": n,
            "rotated": rotate,
            "seed": seed,
            "loss": report_data.loss,
            "accuracy": report_data.accuracy,
            "confusion": report_data.confusion,
        }),
    )
}

/// Throughput numbers for one family/order/grid combination.
pub struct BenchStats {
    pub pair_count: usize,
    pub build_seconds: f64,
    pub precomputed_seconds_per_image: f64,
    pub recompute_seconds_per_image: f64,
    pub per_coefficient_seconds: f64,
    pub moments_per_second: f64,
    pub speedup: f64,
}

/// Time moment extraction on a seeded random image, once against a
/// precomputed kernel table and once rebuilding the table per image.
pub fn bench_stats(
    family: Family,
    pmax: u32,
    size: usize,
    iters: usize,
    seed: u64,
) -> CliResult<BenchStats> {
    if iters == 0 {
        return Err(CliError::Validation("--iters must be at least 1".into()));
    }
    let spec = MomentSpec::new(family, pmax)?;
    let image = random_image(size, seed);
    let grid = UnitDiskGrid::build(size, DiskMode::Inner)?;

    let t = Instant::now();
    let basis = MomentBasis::build(spec, &grid)?;
    let build_seconds = t.elapsed().as_secs_f64();
    let pair_count = basis.pairs().len();

    // One warm pass keeps cache effects out of the measured loop.
    let mut sink = 0.0f64;
    let warm = compute_moments(image.view(), &basis)?;
    sink += warm.values[0].re;

    let t = Instant::now();
    for _ in 0..iters {
        let mv = compute_moments(image.view(), &basis)?;
        sink += std::hint::black_box(mv.values[0].re);
    }
    let precomputed_seconds_per_image = t.elapsed().as_secs_f64() / iters as f64;

    let recompute_iters = (iters / 10).clamp(2, 20);
    let t = Instant::now();
    for _ in 0..recompute_iters {
        let fresh = MomentBasis::build(spec, &grid)?;
        let mv = compute_moments(image.view(), &fresh)?;
        sink += std::hint::black_box(mv.values[0].re);
    }
    let recompute_seconds_per_image = t.elapsed().as_secs_f64() / recompute_iters as f64;
    std::hint::black_box(sink);

    Ok(BenchStats {
        pair_count,
        build_seconds,
        precomputed_seconds_per_image,
        recompute_seconds_per_image,
        per_coefficient_seconds: precomputed_seconds_per_image / pair_count as f64,
        moments_per_second: pair_count as f64 / precomputed_seconds_per_image,
        speedup: recompute_seconds_per_image / precomputed_seconds_per_image,
    })
}

pub fn bench(
    family: FamilyArg,
    pmax: u32,
    size: usize,
    iters: usize,
    seed: u64,
    report_path: Option<&Path>,
) -> CliResult<()> {
    let stats = bench_stats(family.family(), pmax, size, iters, seed)?;
    eprintln!(
        "{} p<={} M={}: {} pairs, {:.3e} s/image precomputed, {:.3e} s/image recomputed, speedup {:.1}x",
        family.code(),
        pmax,
        size,
        stats.pair_count,
        stats.precomputed_seconds_per_image,
        stats.recompute_seconds_per_image,
        stats.speedup,
    );
    report::emit_json(
        report_path,
        &serde_json::json!({
            "schema": SCHEMA,
            "kind": "bench",
            "family": family.code(),
            "p_max": pmax,
            "size": size,
            "iters": iters,
            "seed": seed,
            "pair_count": stats.pair_count,
            "build_seconds": stats.build_seconds,
            "precomputed_seconds_per_image": stats.precomputed_seconds_per_image,
            "recompute_seconds_per_image": stats.recompute_seconds_per_image,
            "per_coefficient_seconds": stats.per_coefficient_seconds,
            "moments_per_second": stats.moments_per_second,
            "speedup": stats.speedup,
        }),
    )
}
