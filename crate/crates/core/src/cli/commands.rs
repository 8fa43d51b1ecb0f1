//! Command implementations. Each returns whether its checks passed.

use std::fs;
use std::path::{Path, PathBuf};

use crate::augment::{faithfulness, FaithSource};
use crate::diffusion::VarianceSchedule;
use crate::error::{Error, Result};
use crate::fsl::{
    episode_sets, run_benchmark, run_grid, AugMode, BenchmarkConfig, BenchmarkSummary,
};
use crate::image::RasterImage;
use crate::rng::{stream, tag};
use crate::theory::bound::{bound_comparison_report, BoundComparisonParams};
use crate::theory::margin::{
    margin_bound_report, radius_scaling, rate_scaling, sub, HypothesisGrid, MarginAuditConfig,
    MarginConfig, PairwiseWorld,
};
use crate::theory::radius::{verify_prop3, RadiusDistribution};
use crate::theory::risk::{exhaustive_prop1, random_prop1};
use crate::world::GmmWorld;

use super::config::{RunConfig, SweepAxis, SweepSpec};

/// Version tag written in the first column of every CSV row.
pub const SCHEMA: &str = "v1";

/// Largest accepted gap of the risk decomposition.
pub const PROP1_TOLERANCE: f64 = 1e-12;
/// Accepted relative deviation of the radius and rate scalings.
pub const SCALING_TOLERANCE: f64 = 0.2;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes a header and rows; every row is prefixed with the schema tag.
fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut head = vec!["schema"];
    head.extend_from_slice(header);
    w.write_record(&head)?;
    for row in rows {
        w.write_record(std::iter::once(SCHEMA).chain(row.iter().map(String::as_str)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(f).unwrap_or_default()
}

struct Setup {
    world: GmmWorld,
    schedule: VarianceSchedule,
    bench: BenchmarkConfig,
}

fn setup(cfg: &RunConfig) -> Result<Setup> {
    let world = cfg.world()?;
    let schedule = cfg.schedule()?;
    let bench = cfg.benchmark(&world)?;
    Ok(Setup {
        world,
        schedule,
        bench,
    })
}

fn summary_row(cfg: &BenchmarkConfig, ks: usize, kq: usize, s: &BenchmarkSummary) -> Vec<String> {
    vec![
        cfg.mode.name().to_string(),
        ks.to_string(),
        kq.to_string(),
        f(cfg.aug.eta.value()),
        f(cfg.aug.lambda_img),
        s.episodes.len().to_string(),
        f(s.mean),
        f(s.stderr),
        f(s.ci95),
        opt(s.diversity),
    ]
}

const SUMMARY_HEADER: [&str; 10] = [
    "mode",
    "k_sup",
    "k_qry",
    "eta",
    "lambda_img",
    "episodes",
    "mean",
    "stderr",
    "ci95",
    "diversity",
];

/// Runs the benchmark, writes `episodes.csv` and `summary.csv`, prints mean and interval.
pub fn cmd_eval(cfg: &RunConfig, out: &Path, save_aug: bool) -> Result<BenchmarkSummary> {
    let s = setup(cfg)?;
    create_dir(out)?;
    let summary = run_benchmark(&s.world, &s.schedule, &s.bench, cfg.seed)?;
    let (ks, kq) = match cfg.mode {
        AugMode::None => (0, 0),
        _ => (cfg.k_sup, cfg.k_qry),
    };
    let episodes: Vec<Vec<String>> = summary
        .episodes
        .iter()
        .map(|e| {
            vec![
                e.index.to_string(),
                e.seed.to_string(),
                e.correct.to_string(),
                e.total.to_string(),
                f(e.accuracy),
            ]
        })
        .collect();
    write_csv(
        &out.join("episodes.csv"),
        &["episode", "seed", "correct", "total", "accuracy"],
        &episodes,
    )?;
    write_csv(
        &out.join("summary.csv"),
        &SUMMARY_HEADER,
        &[summary_row(&s.bench, ks, kq, &summary)],
    )?;
    if save_aug {
        let (_, sup, qry) = episode_sets(&s.world, &s.schedule, &s.bench, cfg.seed, 0)?;
        for (kind, sets) in [("support", sup), ("query", qry)] {
            for (i, set) in sets.iter().enumerate() {
                set.dump_pgm(&out.join("aug").join(format!("episode0_{kind}{i}")))?;
            }
        }
    }
    println!(
        "mode={} k_sup={ks} k_qry={kq} episodes={} accuracy={:.4} +/- {:.4}",
        cfg.mode.name(),
        summary.episodes.len(),
        summary.mean,
        summary.ci95
    );
    Ok(summary)
}

/// One sweep row: axis values plus the summary.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub values: Vec<String>,
    pub k_sup: usize,
    pub k_qry: usize,
    pub summary: BenchmarkSummary,
}

/// Runs the cartesian product of the sweep axes and writes `sweep.csv`.
///
/// Augmentation-count axes share generated views through one grid run per
/// setting of the other axes. When both count axes are swept, the mean
/// accuracies are also written as a matrix to `ka_matrix.csv`.
pub fn cmd_sweep(cfg: &RunConfig, specs: &[SweepSpec], out: &Path) -> Result<Vec<SweepRow>> {
    if specs.is_empty() {
        return Err(Error::Config("sweep needs at least one axis".into()));
    }
    for (i, a) in specs.iter().enumerate() {
        if specs[..i].iter().any(|b| b.axis == a.axis) {
            return Err(Error::Config(format!("axis {} given twice", a.axis.name())));
        }
    }
    let s = setup(cfg)?;
    create_dir(out)?;
    let find = |axis| specs.iter().find(|sp| sp.axis == axis);
    let parse_counts = |axis, default: usize| -> Result<Vec<usize>> {
        find(axis).map_or(Ok(vec![default]), |sp: &SweepSpec| {
            sp.values
                .iter()
                .map(|v| {
                    v.parse()
                        .map_err(|_| Error::Config(format!("bad count {v}")))
                })
                .collect()
        })
    };
    let sup = parse_counts(SweepAxis::KaSup, cfg.k_sup)?;
    let qry = parse_counts(SweepAxis::KaQry, cfg.k_qry)?;
    let grid: Vec<(usize, usize)> = sup
        .iter()
        .flat_map(|&a| qry.iter().map(move |&b| (a, b)))
        .collect();

    let outer: Vec<&SweepSpec> = specs
        .iter()
        .filter(|sp| !matches!(sp.axis, SweepAxis::KaSup | SweepAxis::KaQry))
        .collect();
    let mut settings: Vec<Vec<&str>> = vec![vec![]];
    for sp in &outer {
        settings = settings
            .into_iter()
            .flat_map(|prefix| {
                sp.values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.as_str());
                    p
                })
            })
            .collect();
    }

    let mut rows = Vec::new();
    for setting in settings {
        let mut run = cfg.clone();
        for (sp, v) in outer.iter().zip(&setting) {
            let key = match sp.axis {
                SweepAxis::Eta => "aug.eta",
                SweepAxis::LambdaImg => "aug.lambda_img",
                SweepAxis::Mode => "mode",
                SweepAxis::KaSup | SweepAxis::KaQry => unreachable!(),
            };
            run.set(key, v)?;
        }
        let bench = BenchmarkConfig {
            mode: run.mode,
            aug: run.aug.clone(),
            ..s.bench.clone()
        };
        let point_grid: Vec<(usize, usize)> = if run.mode == AugMode::None {
            vec![(0, 0)]
        } else {
            grid.clone()
        };
        let summaries = run_grid(&s.world, &s.schedule, &bench, &point_grid, cfg.seed)?;
        for (&(ks, kq), summary) in point_grid.iter().zip(summaries) {
            let values = specs
                .iter()
                .map(|sp| match sp.axis {
                    SweepAxis::KaSup => ks.to_string(),
                    SweepAxis::KaQry => kq.to_string(),
                    _ => setting[outer.iter().position(|o| o.axis == sp.axis).unwrap()].to_string(),
                })
                .collect();
            eprintln!(
                "mode={} eta={} lambda_img={} k_sup={ks} k_qry={kq} accuracy={:.4} +/- {:.4}",
                bench.mode.name(),
                bench.aug.eta.value(),
                bench.aug.lambda_img,
                summary.mean,
                summary.ci95
            );
            rows.push(SweepRow {
                values,
                k_sup: ks,
                k_qry: kq,
                summary,
            });
        }
    }

    let mut header: Vec<&str> = specs.iter().map(|sp| sp.axis.name()).collect();
    header.extend_from_slice(&["episodes", "mean", "stderr", "ci95", "diversity"]);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = r.values.clone();
            row.extend([
                r.summary.episodes.len().to_string(),
                f(r.summary.mean),
                f(r.summary.stderr),
                f(r.summary.ci95),
                opt(r.summary.diversity),
            ]);
            row
        })
        .collect();
    write_csv(&out.join("sweep.csv"), &header, &table)?;

    if find(SweepAxis::KaSup).is_some() && find(SweepAxis::KaQry).is_some() && outer.is_empty() {
        let cols: Vec<String> = qry.iter().map(|k| format!("k_qry_{k}")).collect();
        let mut head = vec!["k_sup"];
        head.extend(cols.iter().map(String::as_str));
        let matrix: Vec<Vec<String>> = sup
            .iter()
            .map(|&ks| {
                let mut row = vec![ks.to_string()];
                row.extend(qry.iter().map(|&kq| {
                    rows.iter()
                        .find(|r| r.k_sup == ks && r.k_qry == kq)
                        .map_or_else(String::new, |r| f(r.summary.mean))
                }));
                row
            })
            .collect();
        write_csv(&out.join("ka_matrix.csv"), &head, &matrix)?;
    }
    Ok(rows)
}

/// Theory audit selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TheoryWhich {
    Prop1,
    Prop3,
    Margin,
    BoundCompare,
    All,
}

impl TheoryWhich {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "prop1" => Ok(Self::Prop1),
            "prop3" => Ok(Self::Prop3),
            "margin" => Ok(Self::Margin),
            "bound-compare" => Ok(Self::BoundCompare),
            "all" => Ok(Self::All),
            _ => Err(Error::Config(format!(
                "unknown theory selector {s}; expected prop1, prop3, margin, bound-compare or all"
            ))),
        }
    }

    fn includes(self, other: TheoryWhich) -> bool {
        self == other || self == TheoryWhich::All
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Runs the selected audits, writes their CSVs and reports whether all passed.
pub fn cmd_theory(cfg: &RunConfig, which: TheoryWhich, out: &Path) -> Result<bool> {
    let t = &cfg.theory;
    create_dir(out)?;
    let mut ok = true;

    if which.includes(TheoryWhich::Prop1) {
        let ex = exhaustive_prop1(t.prop1_max_outcomes, t.prop1_denominator);
        let mut rng = stream(cfg.seed, &[tag::THEORY, sub::PROP1]);
        let rand = random_prop1(t.prop1_random_tables, &mut rng);
        let mut rows = Vec::new();
        for (kind, a) in [("exhaustive", ex), ("random", rand)] {
            let pass = a.max_gap <= PROP1_TOLERANCE;
            ok &= pass;
            println!(
                "prop1 {kind}: tables={} max gap={:e} {}",
                a.tables,
                a.max_gap,
                verdict(pass)
            );
            rows.push(vec![
                kind.into(),
                a.tables.to_string(),
                f(a.max_gap),
                pass.to_string(),
            ]);
        }
        write_csv(
            &out.join("prop1_audit.csv"),
            &["kind", "tables", "max_gap", "pass"],
            &rows,
        )?;
    }

    if which.includes(TheoryWhich::Prop3) {
        let mut rows = Vec::new();
        for &(d, m) in &t.prop3_cases {
            let r = verify_prop3(
                d,
                m,
                t.prop3_trials,
                &RadiusDistribution::StandardNormal,
                cfg.seed,
            )?;
            ok &= r.passes;
            println!(
                "prop3 d={d} m={m}: estimate={:.4} lower={:.4} {}",
                r.estimate,
                r.lower,
                verdict(r.passes)
            );
            rows.push(vec![
                d.to_string(),
                m.to_string(),
                r.trials.to_string(),
                r.successes.to_string(),
                f(r.estimate),
                f(r.stderr),
                f(r.lower),
                r.passes.to_string(),
            ]);
        }
        write_csv(
            &out.join("prop3_audit.csv"),
            &[
                "dim",
                "m",
                "trials",
                "successes",
                "estimate",
                "stderr",
                "lower_3sigma",
                "pass",
            ],
            &rows,
        )?;
    }

    if which.includes(TheoryWhich::Margin) {
        ok &= margin_audit(cfg, out)?;
    }

    if which.includes(TheoryWhich::BoundCompare) {
        let base = PairwiseWorld::default();
        let beta = t
            .margin_beta
            .unwrap_or_else(|| base.calibrate_beta(10_000, cfg.seed));
        let params = BoundComparisonParams {
            m_base: t.bound_m_base,
            m_novel: t.bound_m_novel,
            m_tr: t.bound_m_tr,
            m_test: t.bound_m_test,
            rho: t.margin_rho,
            delta: t.margin_delta,
            resamples: t.bound_resamples,
            seed: cfg.seed,
            ..BoundComparisonParams::with_c_enc(t.bound_c_enc, beta)
        };
        let r = bound_comparison_report(&base, &PairwiseWorld::default_novel(), &params)?;
        ok &= r.passes;
        for row in &r.rows {
            println!(
                "bound {}: n={} radius={:.4} rhs={:.4} {}",
                row.setting, row.sample_size, row.radius, row.rhs, row.symbolic
            );
        }
        println!(
            "bound radius audit: r_hat < r0 in {}/{} resamples ({:.4}) {}",
            r.wins,
            r.resamples,
            r.fraction,
            verdict(r.passes)
        );
        let rows: Vec<Vec<String>> = r
            .rows
            .iter()
            .map(|row| {
                vec![
                    row.setting.to_string(),
                    row.sample_size.to_string(),
                    f(row.radius),
                    f(row.b_x),
                    f(row.l_enc),
                    f(r.c_enc),
                    f(params.rho),
                    f(params.delta),
                    f(row.margin_risk),
                    f(row.complexity_term),
                    f(row.confidence_term),
                    f(row.rhs),
                    row.symbolic.to_string(),
                    r.resamples.to_string(),
                    r.wins.to_string(),
                    f(r.fraction),
                    r.passes.to_string(),
                ]
            })
            .collect();
        write_csv(
            &out.join("bound_comparison.csv"),
            &[
                "setting",
                "sample_size",
                "radius",
                "b_x",
                "l_enc",
                "c_enc",
                "rho",
                "delta",
                "margin_risk",
                "complexity_term",
                "confidence_term",
                "rhs",
                "symbolic",
                "resamples",
                "radius_wins",
                "radius_win_fraction",
                "pass",
            ],
            &rows,
        )?;
    }
    Ok(ok)
}

fn margin_audit(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let t = &cfg.theory;
    let world = PairwiseWorld::default();
    let beta = t
        .margin_beta
        .unwrap_or_else(|| world.calibrate_beta(10_000, cfg.seed));
    let grid = HypothesisGrid::bias_circle(world.dim(), t.margin_grid, t.margin_grid_radius)?;
    let audit = MarginAuditConfig {
        margin: MarginConfig {
            rho: t.margin_rho,
            beta,
            delta: t.margin_delta,
            m: t.margin_m,
        },
        trials: t.margin_trials,
        sign_vectors: t.margin_sign_vectors,
        seed: cfg.seed,
    };
    let report = margin_bound_report(&world, &grid, &audit)?;
    let radius = radius_scaling(
        &world,
        &grid,
        beta,
        t.margin_m,
        t.margin_radius_factor,
        t.margin_sign_vectors,
        cfg.seed,
    )?;
    let rate = rate_scaling(
        &world,
        &grid,
        beta,
        &t.margin_rate_sizes,
        t.margin_rate_repeats,
        t.margin_sign_vectors,
        cfg.seed,
    )?;
    let radius_pass = (radius.ratio - radius.factor).abs() <= SCALING_TOLERANCE * radius.factor;
    let rate_pass = rate.max_rel_dev <= SCALING_TOLERANCE;
    println!(
        "margin bound: holds in {:.4} of {} trials, threshold {:.4} {}",
        report.fraction,
        report.trials.len(),
        report.threshold,
        verdict(report.passes)
    );
    println!(
        "margin radius scaling: ratio {:.4} for factor {} {}",
        radius.ratio,
        radius.factor,
        verdict(radius_pass)
    );
    println!(
        "margin rate: max relative deviation of estimate*sqrt(m) {:.4} {}",
        rate.max_rel_dev,
        verdict(rate_pass)
    );
    let m = t.margin_m.to_string();
    let mut rows: Vec<Vec<String>> = report
        .trials
        .iter()
        .map(|tr| {
            vec![
                "trial".into(),
                tr.trial.to_string(),
                m.clone(),
                f(tr.rademacher),
                f(tr.worst_slack),
                tr.holds.to_string(),
            ]
        })
        .collect();
    rows.push(vec![
        "holding_fraction".into(),
        String::new(),
        m.clone(),
        f(report.fraction),
        f(report.threshold),
        report.passes.to_string(),
    ]);
    rows.push(vec![
        "radius_scaling".into(),
        String::new(),
        m,
        f(radius.ratio),
        f(radius.base),
        radius_pass.to_string(),
    ]);
    for (i, (&size, (&est, &norm))) in rate
        .sizes
        .iter()
        .zip(rate.estimates.iter().zip(&rate.normalized))
        .enumerate()
    {
        rows.push(vec![
            "rate".into(),
            i.to_string(),
            size.to_string(),
            f(est),
            f(norm),
            rate_pass.to_string(),
        ]);
    }
    write_csv(
        &out.join("margin_bound_audit.csv"),
        &["record", "index", "m", "value", "aux", "pass"],
        &rows,
    )?;
    Ok(report.passes && radius_pass && rate_pass)
}

/// Where `dump-variants` takes its source image from.
#[derive(Clone, Debug, PartialEq)]
pub enum ImageSource {
    File(PathBuf),
    Template(usize),
    /// A draw from the class distribution under the master seed.
    Sample(usize),
}

/// Writes the source and `aug.variants` generated variants as `view_k.pgm`.
pub fn cmd_dump_variants(
    cfg: &RunConfig,
    source: &ImageSource,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let s = setup(cfg)?;
    let class_check = |k: usize| {
        if k < s.world.class_count() {
            Ok(k)
        } else {
            Err(Error::Config(format!(
                "class {k} out of range for {} classes",
                s.world.class_count()
            )))
        }
    };
    let x: RasterImage = match source {
        ImageSource::File(p) => RasterImage::read_pgm(p)?,
        ImageSource::Template(k) => s.world.template(class_check(*k)?).clone(),
        ImageSource::Sample(k) => s.world.sample(
            class_check(*k)?,
            &mut stream(cfg.seed, &[tag::CALIBRATION, *k as u64]),
        ),
    };
    if !x.same_shape(s.world.template(0)) {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{}, world is {}x{}",
            x.width(),
            x.height(),
            s.world.width(),
            s.world.height()
        )));
    }
    let set = crate::augment::augment_set(&x, &cfg.aug, &s.world, &s.schedule, cfg.seed)?;
    let paths = set.dump_pgm(out)?;
    println!("wrote {} views to {}", paths.len(), out.display());
    Ok(paths)
}

/// World diagnostics and a short benchmark at the configured spread.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub classes: usize,
    pub std: f64,
    pub min_distance: f64,
    pub separability: f64,
    pub baseline: BenchmarkSummary,
    pub augmented: BenchmarkSummary,
    pub faith_conditioned: f64,
    pub faith_unconditioned: f64,
}

/// Measures separation, baseline and augmented accuracy, and faithfulness.
pub fn cmd_calibrate_world(cfg: &RunConfig, out: &Path) -> Result<Calibration> {
    let s = setup(cfg)?;
    create_dir(out)?;
    let bench = BenchmarkConfig {
        spec: crate::fsl::EpisodeSpec {
            episodes: cfg.calibrate_episodes,
            ..s.bench.spec
        },
        ..s.bench.clone()
    };
    let grid = [(0, 0), (cfg.k_sup, cfg.k_qry)];
    let mut runs = run_grid(
        &s.world,
        &s.schedule,
        &BenchmarkConfig {
            mode: AugMode::OneShotDaug,
            ..bench
        },
        &grid,
        cfg.seed,
    )?;
    let augmented = runs.pop().expect("two grid points");
    let baseline = runs.pop().expect("two grid points");
    let trials = cfg.calibrate_trials;
    let faith = |lambda: f64| {
        let aug = crate::augment::AugConfig {
            lambda_img: lambda,
            ..cfg.aug.clone()
        };
        faithfulness(
            &s.world,
            &s.schedule,
            &aug,
            FaithSource::Sample,
            trials,
            cfg.seed,
        )
    };
    let c = Calibration {
        classes: s.world.class_count(),
        std: s.world.std(),
        min_distance: s.world.min_template_distance(),
        separability: s.world.separability_ratio(),
        faith_conditioned: faith(cfg.aug.lambda_img)?,
        faith_unconditioned: faith(0.0)?,
        baseline,
        augmented,
    };
    println!(
        "classes={} std={} min_distance={:.4} separability={:.4}",
        c.classes, c.std, c.min_distance, c.separability
    );
    println!(
        "baseline={:.4} +/- {:.4} augmented={:.4} +/- {:.4} faithfulness conditioned={:.4} unconditioned={:.4}",
        c.baseline.mean, c.baseline.ci95, c.augmented.mean, c.augmented.ci95, c.faith_conditioned, c.faith_unconditioned
    );
    write_csv(
        &out.join("calibration.csv"),
        &[
            "classes",
            "std",
            "min_distance",
            "separability",
            "episodes",
            "baseline_mean",
            "baseline_ci95",
            "augmented_mean",
            "augmented_ci95",
            "faith_conditioned",
            "faith_unconditioned",
        ],
        &[vec![
            c.classes.to_string(),
            f(c.std),
            f(c.min_distance),
            f(c.separability),
            cfg.calibrate_episodes.to_string(),
            f(c.baseline.mean),
            f(c.baseline.ci95),
            f(c.augmented.mean),
            f(c.augmented.ci95),
            f(c.faith_conditioned),
            f(c.faith_unconditioned),
        ]],
    )?;
    Ok(c)
}
