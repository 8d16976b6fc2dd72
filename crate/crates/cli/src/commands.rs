//! The four subcommands: resolve a [`RunConfig`] into a plan, then run it.

use pdlaws::exact_laws::ENUMERATION_CAP;
use pdlaws::limit_laws::{k_limit_density, DensityGrid, JointLimitDensity, TrimmedControl};
use pdlaws::mc_verify::*;
use pdlaws::samplers::{sample_batch, BatchOptions, RngSeed};
use pdlaws::special_fn::{
    mittag_leffler_cdf, mittag_leffler_density, sml_bridge, stable_density, trunc_sub_density, SeriesControl,
    StableParams, TruncSubParams,
};
use pdlaws::{ModelSpec, PartitionTable, QuadratureControl};
use serde_json::{json, Value};

use crate::config::{DensityKind, Format, ModelKind, RunConfig, Suite};
use crate::CliError;

/// Largest stable / Mittag-Leffler identity gap accepted by `sml-check`.
pub const SML_TOL: f64 = 1e-8;

pub enum Plan {
    Pmf {
        model: ModelSpec,
        n: usize,
        qctl: QuadratureControl,
    },
    Sample {
        model: ModelSpec,
        n: usize,
        draws: usize,
        j: usize,
        seed: RngSeed,
        workers: usize,
        opts: BatchOptions,
    },
    Density {
        kind: DensityKind,
        xs: Vec<f64>,
        model: Option<ModelSpec>,
        alpha: f64,
        sctl: SeriesControl,
        tctl: TrimmedControl,
    },
    Verify {
        runs: Vec<(Suite, RunConfig)>,
    },
}

pub struct Output {
    pub body: String,
    pub series: Option<String>,
    pub summary: Value,
    pub passed: bool,
}

fn grid(from: f64, to: f64, points: usize) -> Result<Vec<f64>, CliError> {
    if points == 0 {
        return Err(CliError::Usage("empty grid: --points must be at least 1".into()));
    }
    if !(from.is_finite() && to.is_finite() && from <= to) {
        return Err(CliError::Usage(format!("bad grid range [{from}, {to}]")));
    }
    if points == 1 {
        return Ok(vec![from]);
    }
    let h = (to - from) / (points - 1) as f64;
    Ok((0..points).map(|i| if i + 1 == points { to } else { from + h * i as f64 }).collect())
}

fn alpha_only(cfg: &mut RunConfig) -> Result<f64, CliError> {
    cfg.model = Some(ModelKind::Stable);
    cfg.theta = None;
    cfg.r = None;
    match cfg.resolve_model()? {
        ModelSpec::StablePd { alpha } => Ok(alpha),
        _ => unreachable!(),
    }
}

fn suite_defaults(suite: Suite, cfg: &mut RunConfig) {
    let (n, draws, j) = match suite {
        Suite::KLimit => (10_000, Some(MIN_DRAWS_K as usize), None),
        Suite::Spectrum => (10_000, Some(MIN_DRAWS_PRODUCT as usize), Some(1)),
        Suite::EwensProduct => (10_000, Some(MIN_DRAWS_PRODUCT as usize), Some(2)),
        Suite::RContinuity | Suite::Diagram => (5, None, None),
        Suite::Appendix => {
            cfg.n_grid.get_or_insert_with(|| vec![100, 10_000, 1_000_000]);
            return;
        }
        Suite::All => unreachable!(),
    };
    if suite != Suite::KLimit || cfg.n_grid.is_none() {
        cfg.n.get_or_insert(n);
    }
    if let Some(d) = draws {
        cfg.draws.get_or_insert(d);
        cfg.seed.get_or_insert(0);
        cfg.stream.get_or_insert(0);
    }
    if let Some(j) = j {
        cfg.j.get_or_insert(j);
    }
}

fn plan_suite(suite: Suite, base: &RunConfig) -> Result<RunConfig, CliError> {
    let mut cfg = base.clone();
    cfg.suite = Some(suite);
    match suite {
        Suite::KLimit | Suite::Spectrum => {
            cfg.resolve_model()?;
        }
        Suite::EwensProduct => {
            cfg.model = Some(ModelKind::Ewens);
            cfg.resolve_model()?;
        }
        _ => {
            alpha_only(&mut cfg)?;
        }
    }
    suite_defaults(suite, &mut cfg);
    match suite {
        Suite::RContinuity | Suite::Appendix => {}
        Suite::Diagram => {
            cfg.trimmed_control()?;
        }
        _ => {
            cfg.trimmed_control()?;
            cfg.subordinator_control();
        }
    }
    if !matches!(suite, Suite::Appendix) {
        cfg.quadrature_control()?;
    }
    Ok(cfg)
}

/// Fills defaults into `cfg` and validates it.
pub fn plan(cfg: &mut RunConfig) -> Result<Plan, CliError> {
    match cfg.command.as_deref() {
        Some("pmf") => {
            let model = cfg.resolve_model()?;
            let n = cfg.require_n()?;
            if n == 0 || n > ENUMERATION_CAP {
                return Err(CliError::Usage(format!("--n must be in 1..={ENUMERATION_CAP}, got {n}")));
            }
            cfg.format.get_or_insert(Format::Csv);
            let qctl = cfg.quadrature_control()?;
            Ok(Plan::Pmf { model, n, qctl })
        }
        Some("sample") => {
            let model = cfg.resolve_model()?;
            let n = cfg.require_n()?;
            let opts = BatchOptions {
                method: (*cfg.method.get_or_insert(crate::config::Method::Auto)).into(),
                subordinator: cfg.subordinator_control(),
                quadrature: cfg.quadrature_control()?,
            };
            let seed = RngSeed::new(*cfg.seed.get_or_insert(0), *cfg.stream.get_or_insert(0));
            cfg.format.get_or_insert(Format::Csv);
            Ok(Plan::Sample {
                model,
                n,
                draws: *cfg.draws.get_or_insert(1000),
                j: *cfg.j.get_or_insert(0),
                seed,
                workers: *cfg.workers.get_or_insert(1),
                opts,
            })
        }
        Some("density") => {
            let kind = *cfg.density.get_or_insert(DensityKind::Ml);
            let xs = grid(
                *cfg.from.get_or_insert(0.05),
                *cfg.to.get_or_insert(5.0),
                *cfg.points.get_or_insert(100),
            )?;
            let (model, alpha) = match kind {
                DensityKind::Marginal | DensityKind::Joint => {
                    let m = cfg.resolve_model()?;
                    (Some(m), m.alpha().unwrap_or(f64::NAN))
                }
                _ => (None, alpha_only(cfg)?),
            };
            match kind {
                DensityKind::Stable => {
                    cfg.scale.get_or_insert(1.0);
                }
                DensityKind::Truncated => {
                    cfg.scale.get_or_insert(1.0);
                    cfg.lambda.get_or_insert(1.0);
                }
                DensityKind::Joint => {
                    cfg.j.get_or_insert(1);
                    grid(
                        *cfg.y_from.get_or_insert(-3.0),
                        *cfg.y_to.get_or_insert(3.0),
                        *cfg.y_points.get_or_insert(61),
                    )?;
                }
                _ => {}
            }
            if model.is_none() {
                cfg.model = None;
            }
            cfg.format.get_or_insert(Format::Csv);
            Ok(Plan::Density {
                kind,
                xs,
                model,
                alpha,
                sctl: cfg.series_control()?,
                tctl: cfg.trimmed_control()?,
            })
        }
        Some("verify") => {
            let suite = cfg
                .suite
                .ok_or_else(|| CliError::Usage("missing --suite".into()))?;
            cfg.workers.get_or_insert(1);
            cfg.format.get_or_insert(Format::Json);
            let runs = if suite == Suite::All {
                cfg.seed.get_or_insert(0);
                cfg.stream.get_or_insert(0);
                Suite::EACH
                    .iter()
                    .map(|&s| Ok((s, plan_suite(s, cfg)?)))
                    .collect::<Result<Vec<_>, CliError>>()?
            } else {
                let one = plan_suite(suite, cfg)?;
                *cfg = one.clone();
                vec![(suite, one)]
            };
            Ok(Plan::Verify { runs })
        }
        other => Err(CliError::Usage(format!("unknown command {other:?}"))),
    }
}

fn csv_with_header(cfg: &RunConfig, extra: &[String], body: &str) -> String {
    let mut s = format!("# pdlaws {} {}\n", cfg.command.as_deref().unwrap_or(""), cfg.provenance_json());
    for line in extra {
        s.push_str("# ");
        s.push_str(line);
        s.push('\n');
    }
    s.push_str(body);
    s
}

fn provenance_value(cfg: &RunConfig) -> Value {
    serde_json::from_str(&cfg.provenance_json()).expect("provenance is JSON")
}

fn json_doc(cfg: &RunConfig, key: &str, value: Value) -> String {
    let mut doc = serde_json::Map::new();
    doc.insert("config".into(), provenance_value(cfg));
    doc.insert(key.into(), value);
    let mut s = serde_json::to_string_pretty(&Value::Object(doc)).expect("document serializes");
    s.push('\n');
    s
}

fn suite_stream(suite: Suite) -> u64 {
    Suite::EACH.iter().position(|&s| s == suite).unwrap_or(0) as u64
}

fn run_suite(suite: Suite, cfg: &RunConfig) -> Result<McReport, CliError> {
    let mut c = cfg.clone();
    let mc = McControl {
        workers: c.workers.unwrap_or(1),
        batch: BatchOptions {
            subordinator: c.subordinator_control(),
            quadrature: c.quadrature_control()?,
            ..BatchOptions::default()
        },
        trimmed: c.trimmed_control()?,
    };
    let seed = RngSeed::new(c.seed.unwrap_or(0), c.stream.unwrap_or(0) + suite_stream(suite));
    let model = |c: &mut RunConfig| c.resolve_model();
    let report = match suite {
        Suite::KLimit => {
            let m = model(&mut c)?;
            match &c.n_grid {
                Some(ns) => verify_k_limit_grid(&m, ns, c.draws.unwrap(), seed, &mc)?,
                None => verify_k_limit(&m, c.n.unwrap(), c.draws.unwrap(), seed, &mc)?,
            }
        }
        Suite::Spectrum => {
            let m = model(&mut c)?;
            verify_spectrum_limit(&m, c.n.unwrap(), c.j.unwrap(), c.draws.unwrap(), seed, &mc)?
        }
        Suite::EwensProduct => {
            verify_ewens_product_law(c.theta.unwrap(), c.n.unwrap(), c.j.unwrap(), c.draws.unwrap(), seed, &mc)?
        }
        Suite::RContinuity => verify_r_continuity_exact(c.alpha.unwrap(), c.n.unwrap(), &mc.batch.quadrature)?,
        Suite::Diagram => verify_r_continuity(c.alpha.unwrap(), c.n.unwrap(), &mc.batch.quadrature, &mc.trimmed)?,
        Suite::Appendix => appendix_diagnostics(c.alpha.unwrap(), c.n_grid.as_deref().unwrap())?,
        Suite::All => unreachable!(),
    };
    Ok(report)
}

fn strip_header(csv: &str) -> &str {
    csv.split_once('\n').map(|(_, rest)| rest).unwrap_or("")
}

pub fn execute(plan: &Plan, cfg: &RunConfig) -> Result<Output, CliError> {
    let format = cfg.format.unwrap_or(Format::Csv);
    match plan {
        Plan::Pmf { model, n, qctl } => {
            let table = PartitionTable::build(*n, &[*model], qctl)?;
            let residual = table.normalization_residuals()[0];
            let body = match format {
                Format::Csv => csv_with_header(cfg, &[], &table.to_csv()),
                Format::Json => json_doc(cfg, "table", serde_json::from_str(&table.to_json()).expect("table is JSON")),
            };
            Ok(Output {
                body,
                series: None,
                summary: json!({ "command": "pmf", "rows": table.rows.len(), "normalization_residual": residual }),
                passed: true,
            })
        }
        Plan::Sample {
            model,
            n,
            draws,
            j,
            seed,
            workers,
            opts,
        } => {
            let batch = sample_batch(model, *n, *draws, *j, *seed, *workers, opts)?;
            let body = match format {
                Format::Csv => {
                    let header = serde_json::to_string(&batch.header).expect("header serializes");
                    csv_with_header(cfg, &[format!("batch {header}")], &batch.to_csv())
                }
                Format::Json => json_doc(cfg, "batch", serde_json::to_value(&batch).expect("batch serializes")),
            };
            let mean_k = batch.rows.iter().map(|r| r.k as f64).sum::<f64>() / (*draws).max(1) as f64;
            Ok(Output {
                body,
                series: None,
                summary: json!({ "command": "sample", "draws": draws, "mean_k": mean_k }),
                passed: true,
            })
        }
        Plan::Density {
            kind,
            xs,
            model,
            alpha,
            sctl,
            tctl,
        } => {
            let alpha = *alpha;
            let mut summary = json!({ "command": "density", "density": kind, "points": xs.len() });
            let mut passed = true;
            let grid = match kind {
                DensityKind::Ml => {
                    let g = DensityGrid::scalar("density", xs, |x| mittag_leffler_density(alpha, x, sctl))?;
                    let trap: f64 = g
                        .rows
                        .windows(2)
                        .map(|w| 0.5 * (w[1][0] - w[0][0]) * (w[0][1] + w[1][1]))
                        .sum();
                    let below = mittag_leffler_cdf(alpha, xs[0])?;
                    let above = 1.0 - mittag_leffler_cdf(alpha, *xs.last().unwrap())?;
                    summary["trapezoid_mass"] = json!(trap);
                    summary["mass_below_grid"] = json!(below);
                    summary["mass_above_grid"] = json!(above);
                    g
                }
                DensityKind::Stable => {
                    let p = StableParams::new(alpha, cfg.scale.unwrap())?;
                    DensityGrid::scalar("density", xs, |s| {
                        if s <= 0.0 {
                            Ok(0.0)
                        } else {
                            stable_density(&p, s, sctl)
                        }
                    })?
                }
                DensityKind::Truncated => {
                    let p = TruncSubParams::new(alpha, cfg.scale.unwrap(), cfg.lambda.unwrap())?;
                    DensityGrid::scalar("density", xs, |y| if y <= 0.0 { Ok(0.0) } else { trunc_sub_density(&p, y) })?
                }
                DensityKind::Marginal => {
                    let m = model.expect("model resolved");
                    DensityGrid::scalar("density", xs, |x| k_limit_density(&m, x, tctl))?
                }
                DensityKind::Joint => {
                    let mut joint = JointLimitDensity::new(model.expect("model resolved"), cfg.j.unwrap())?;
                    joint.trimmed = *tctl;
                    let ts = grid(cfg.y_from.unwrap(), cfg.y_to.unwrap(), cfg.y_points.unwrap())?;
                    DensityGrid::joint(&joint, xs, &ts)?
                }
                DensityKind::SmlCheck => {
                    let mut rows = Vec::with_capacity(xs.len());
                    let mut worst: f64 = 0.0;
                    for &x in xs {
                        let (l, r) = sml_bridge(alpha, x, sctl)?;
                        worst = worst.max((l - r).abs());
                        rows.push(vec![x, l, r, (l - r).abs()]);
                    }
                    summary["max_gap"] = json!(worst);
                    summary["tolerance"] = json!(SML_TOL);
                    passed = worst < SML_TOL;
                    DensityGrid {
                        columns: ["x", "stable_side", "mittag_leffler_side", "gap"].map(String::from).to_vec(),
                        rows,
                    }
                }
            };
            let body = match format {
                Format::Csv => csv_with_header(cfg, &[], &grid.to_csv()),
                Format::Json => json_doc(cfg, "grid", json!({ "columns": grid.columns, "rows": grid.rows })),
            };
            summary["passed"] = json!(passed);
            Ok(Output {
                body,
                series: None,
                summary,
                passed,
            })
        }
        Plan::Verify { runs } => {
            let mut reports = Vec::with_capacity(runs.len());
            for (suite, c) in runs {
                reports.push((c, run_suite(*suite, c)?));
            }
            let passed = reports.iter().all(|(_, r)| r.passed());
            let body = match format {
                Format::Json => {
                    let items: Vec<Value> = reports
                        .iter()
                        .map(|(c, r)| json!({ "config": provenance_value(c), "report": r }))
                        .collect();
                    let mut doc = serde_json::Map::new();
                    doc.insert("config".into(), provenance_value(cfg));
                    doc.insert("passed".into(), json!(passed));
                    doc.insert("runs".into(), Value::Array(items));
                    let mut s = serde_json::to_string_pretty(&Value::Object(doc)).expect("report serializes");
                    s.push('\n');
                    s
                }
                Format::Csv => {
                    let extra: Vec<String> = reports
                        .iter()
                        .map(|(c, r)| format!("{} {}", r.experiment, c.provenance_json()))
                        .collect();
                    let mut body = String::new();
                    for (i, (_, r)) in reports.iter().enumerate() {
                        let csv = r.to_csv();
                        body.push_str(if i == 0 { &csv } else { strip_header(&csv) });
                    }
                    csv_with_header(cfg, &extra, &body)
                }
            };
            let mut series = String::new();
            for (i, (_, r)) in reports.iter().enumerate() {
                let csv = r.series_csv();
                series.push_str(if i == 0 { &csv } else { strip_header(&csv) });
            }
            let verdicts: Vec<Value> = reports
                .iter()
                .flat_map(|(_, r)| {
                    r.verdicts
                        .iter()
                        .map(move |v| json!({ "experiment": r.experiment, "verdict": v.name, "value": v.value, "pass": v.pass }))
                })
                .collect();
            Ok(Output {
                body,
                series: Some(series),
                summary: json!({ "command": "verify", "passed": passed, "verdicts": verdicts }),
                passed,
            })
        }
    }
}
