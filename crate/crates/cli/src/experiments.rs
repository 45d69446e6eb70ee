//! Execution of a parsed configuration: sweep expansion, per-point runs and
//! artifact writing.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use scramble_core::circuit::{
    chain_prediction, direct_squared_commutator_series, monte_carlo_weight_distribution, McOptions,
};
use scramble_core::classical::{
    default_window, lyapunov_estimate, perturbation_growth, GrowthOptions, OscillatorParams,
};
use scramble_core::continuum::{integrate_fp, stationary_density, FpDensity, FpGrid, FpOperator};
use scramble_core::spin_chain::{
    entanglement_entropy_quench, level_statistics, otoc, Boundary, ChainParams, KrylovOptions,
    LevelStatisticsOptions,
};
use scramble_core::weight_markov::{evolve, initial_distribution};
use scramble_core::{CircuitParams, TransitionMatrix, WeightDistribution};

use crate::acceptance;
use crate::analysis::{collapse_check, CollapseCurve};
use crate::config::{time_points, Experiment, ExperimentConfig, FpDomain};
use crate::output::{
    prepare_dir, write_checkpoint, write_manifest, write_records, Manifest, PointRecords,
    PointStatus,
};

/// Outcome of `run`.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub points: Vec<PointStatus>,
}

impl RunSummary {
    pub fn failed(&self) -> usize {
        self.points.iter().filter(|p| !p.ok).count()
    }
}

/// A file produced by a point besides its records.
struct Checkpoint {
    path: PathBuf,
    header: Vec<&'static str>,
    rows: Vec<Vec<f64>>,
}

struct PointOutput {
    records: PointRecords,
    checkpoints: Vec<Checkpoint>,
    collapse: Option<(usize, CollapseCurve)>,
}

impl PointOutput {
    fn new(records: PointRecords) -> Self {
        Self {
            records,
            checkpoints: Vec::new(),
            collapse: None,
        }
    }
}

type PointResult = Result<PointOutput, String>;

/// A sweep point: its label and the closure that computes it.
struct Job<'a> {
    label: String,
    run: Box<dyn Fn(&str) -> PointResult + Send + Sync + 'a>,
}

fn label(parts: &[(&str, String)]) -> String {
    parts
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn core<T>(r: scramble_core::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Checkpoint file name, safe on every platform.
fn checkpoint_path(point: &str, tag: &str) -> PathBuf {
    let clean: String = point
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    PathBuf::from("checkpoints")
        .join(clean)
        .join(format!("{tag}.csv"))
}

fn distribution_rows(d: &WeightDistribution) -> Vec<Vec<f64>> {
    (0..=d.n_sites())
        .map(|w| vec![w as f64, d.get(w, 0), d.get(w, 1)])
        .collect()
}

fn jobs<'a>(config: &'a ExperimentConfig) -> Vec<Job<'a>> {
    let seed = config.seed;
    let every = config.checkpoint_every;
    let mut out: Vec<Job<'a>> = Vec::new();
    match &config.experiment {
        Experiment::MarkovEvolve(e) => {
            for &n in &e.n_sites {
                for &g in &e.coupling {
                    out.push(Job {
                        label: label(&[("n_sites", n.to_string()), ("coupling", g.to_string())]),
                        run: Box::new(move |point| {
                            let p = core(CircuitParams::with_exponent(n, g, e.coupling_exponent))?;
                            let r = core(TransitionMatrix::build(&p))?;
                            let init = core(initial_distribution(n))?;
                            let stride = e.record_every;
                            let marks: Vec<usize> = match every {
                                Some(k) => (0..=e.steps).step_by(stride * k).collect(),
                                None => Vec::new(),
                            };
                            let evo = core(evolve(&init, &r, e.steps, &marks))?;
                            let mut rec = PointRecords::new("markov-evolve", point);
                            let g_eff = p.effective_coupling();
                            let mut curve = CollapseCurve {
                                coupling: g,
                                scaled_time: Vec::new(),
                                weight_fraction: Vec::new(),
                            };
                            for o in evo.observables.iter().step_by(stride) {
                                let t = o.time_step as f64;
                                let frac = o.mean_weight / n as f64;
                                rec.push(
                                    "mean_weight",
                                    Some(t),
                                    None,
                                    o.mean_weight,
                                    None,
                                    "sites; x = circuit steps",
                                );
                                rec.push(
                                    "weight_fraction",
                                    Some(t),
                                    None,
                                    frac,
                                    None,
                                    "<w>/N; x = circuit steps",
                                );
                                rec.push(
                                    "mean_commutator",
                                    Some(t),
                                    None,
                                    o.mean_commutator,
                                    None,
                                    "dimensionless; x = circuit steps",
                                );
                                curve.scaled_time.push(g_eff * g_eff * t);
                                curve.weight_fraction.push(frac);
                            }
                            let mut output = PointOutput::new(rec);
                            output.checkpoints = evo
                                .checkpoints
                                .iter()
                                .map(|d| Checkpoint {
                                    path: checkpoint_path(
                                        point,
                                        &format!("step-{:08}", d.time_step()),
                                    ),
                                    header: vec!["w", "h_w0", "h_w1"],
                                    rows: distribution_rows(d),
                                })
                                .collect();
                            output.collapse = Some((n, curve));
                            Ok(output)
                        }),
                    });
                }
            }
        }
        Experiment::FpIntegrate(e) => {
            for &n in &e.n_sites {
                out.push(Job {
                    label: label(&[("n_sites", n.to_string())]),
                    run: Box::new(move |point| {
                        let grid = core(match e.domain {
                            FpDomain::Weight => FpGrid::weight(n, e.n_points),
                            FpDomain::Dynamical => FpGrid::dynamical(n, e.n_points),
                        })?;
                        let op = FpOperator::new(&grid, e.coefficients, e.scheme);
                        let init = core(FpDensity::point_mass(&grid, e.initial_weight))?;
                        let traj = core(integrate_fp(
                            &init,
                            &op,
                            e.tau_final,
                            op.max_stable_dt(),
                            Some(e.record_every),
                        ))?;
                        let stationary = stationary_density(&grid);
                        let mut rec = PointRecords::new("fp-integrate", point);
                        for s in &traj.states {
                            rec.push(
                                "mean_weight",
                                Some(s.tau),
                                None,
                                s.mean_weight(&grid),
                                None,
                                "sites; x = g^2 t",
                            );
                            rec.push(
                                "l1_to_stationary",
                                Some(s.tau),
                                None,
                                s.l1_distance(&stationary, &grid),
                                None,
                                "dimensionless; x = g^2 t",
                            );
                        }
                        rec.scalar("dt_used", traj.dt_used, "g^2 t");
                        let mut output = PointOutput::new(rec);
                        if let Some(k) = every {
                            let nodes = grid.nodes();
                            output.checkpoints = traj
                                .states
                                .iter()
                                .enumerate()
                                .filter(|(i, _)| i % k == 0)
                                .map(|(i, s)| Checkpoint {
                                    path: checkpoint_path(point, &format!("sample-{i:06}")),
                                    header: vec!["tau", "w", "density"],
                                    rows: nodes
                                        .iter()
                                        .zip(&s.values)
                                        .map(|(&x, &v)| vec![s.tau, grid.to_weight(x), v])
                                        .collect(),
                                })
                                .collect();
                        }
                        Ok(output)
                    }),
                });
            }
        }
        Experiment::CircuitMc(e) => {
            for &n in &e.n_sites {
                for &g in &e.coupling {
                    out.push(Job {
                        label: label(&[("n_sites", n.to_string()), ("coupling", g.to_string())]),
                        run: Box::new(move |point| {
                            let p = core(CircuitParams::new(n, g))?;
                            let opts = McOptions {
                                convention: e.convention,
                                left_multiplier: None,
                            };
                            let mc = core(monte_carlo_weight_distribution(
                                &p,
                                e.steps,
                                e.realizations,
                                seed,
                                &opts,
                            ))?;
                            let pred = core(chain_prediction(&p, e.steps, e.convention))?;
                            let mut rec = PointRecords::new("circuit-mc", point);
                            for (t, (m, s)) in mc.mean.iter().zip(&mc.sem).enumerate() {
                                for w in 0..=n {
                                    for w1 in 0..2 {
                                        let Some(i) =
                                            scramble_core::weight_markov::state_index(n, w, w1)
                                        else {
                                            continue;
                                        };
                                        let idx = Some((2 * w + w1) as i64);
                                        rec.push(
                                            "h_mc",
                                            Some(t as f64),
                                            idx,
                                            m.values()[i],
                                            Some(s[i]),
                                            "probability; index = 2w + w1",
                                        );
                                        rec.push(
                                            "h_chain",
                                            Some(t as f64),
                                            idx,
                                            pred[t].values()[i],
                                            None,
                                            "probability; index = 2w + w1",
                                        );
                                    }
                                }
                            }
                            if let Some(r) = e.probe_site {
                                let series = core(direct_squared_commutator_series(
                                    &p,
                                    r,
                                    e.steps,
                                    e.realizations,
                                    seed,
                                    &opts,
                                ))?;
                                for (t, c) in series.iter().enumerate() {
                                    let x = Some(t as f64);
                                    rec.push(
                                        "commutator_direct",
                                        x,
                                        Some(r as i64),
                                        c.direct,
                                        Some(c.direct_sem),
                                        "dimensionless; index = probe site",
                                    );
                                    rec.push(
                                        "commutator_binned",
                                        x,
                                        Some(r as i64),
                                        c.binned,
                                        Some(c.binned_sem),
                                        "dimensionless; index = probe site",
                                    );
                                    rec.push(
                                        "commutator_large_n",
                                        x,
                                        Some(r as i64),
                                        c.large_n,
                                        None,
                                        "dimensionless; index = probe site",
                                    );
                                }
                            }
                            Ok(PointOutput::new(rec))
                        }),
                    });
                }
            }
        }
        Experiment::Otoc(e) => {
            for &n in &e.n_sites {
                for &hx in &e.field_x {
                    for &g in &e.global_g {
                        out.push(Job {
                            label: label(&[
                                ("n_sites", n.to_string()),
                                ("field_x", hx.to_string()),
                                ("global_g", g.to_string()),
                            ]),
                            run: Box::new(move |point| {
                                let params = chain(n, e.ising_j, hx, e.field_z, g, e.boundary);
                                let sites = e.sites.clone().unwrap_or_else(|| vec![n]);
                                let times = time_points(e.t_max, e.dt);
                                let opts = KrylovOptions {
                                    max_dim: e.krylov_dim,
                                    tolerance: e.tolerance,
                                };
                                let res =
                                    core(otoc(&params, &sites, &times, seed, e.n_states, &opts))?;
                                let mut rec = PointRecords::new("otoc", point);
                                for (r, vals) in res.sites.iter().zip(&res.values) {
                                    for (&t, &v) in res.times.iter().zip(vals) {
                                        rec.push(
                                            "otoc",
                                            Some(t),
                                            Some(*r as i64),
                                            v,
                                            None,
                                            "dimensionless; x = t / J; index = site r",
                                        );
                                    }
                                }
                                rec.scalar("max_imaginary", res.max_imaginary, "dimensionless");
                                rec.scalar(
                                    "typicality_scale",
                                    res.typicality_scale(n),
                                    "dimensionless",
                                );
                                Ok(PointOutput::new(rec))
                            }),
                        });
                    }
                }
            }
        }
        Experiment::Entropy(e) => {
            for &n in &e.n_sites {
                for &hx in &e.field_x {
                    for &g in &e.global_g {
                        out.push(Job {
                            label: label(&[
                                ("n_sites", n.to_string()),
                                ("field_x", hx.to_string()),
                                ("global_g", g.to_string()),
                            ]),
                            run: Box::new(move |point| {
                                let params = chain(n, e.ising_j, hx, e.field_z, g, e.boundary);
                                let times = time_points(e.t_max, e.dt);
                                let opts = KrylovOptions {
                                    max_dim: e.krylov_dim,
                                    tolerance: e.tolerance,
                                };
                                let s = core(entanglement_entropy_quench(&params, &times, &opts))?;
                                let mut rec = PointRecords::new("entropy", point);
                                rec.series("half_chain_entropy", &times, &s, "nats; x = t / J");
                                Ok(PointOutput::new(rec))
                            }),
                        });
                    }
                }
            }
        }
        Experiment::LevelStats(e) => {
            for &n in &e.n_sites {
                for &hx in &e.field_x {
                    for &g in &e.global_g {
                        out.push(Job {
                            label: label(&[
                                ("n_sites", n.to_string()),
                                ("field_x", hx.to_string()),
                                ("global_g", g.to_string()),
                            ]),
                            run: Box::new(move |point| {
                                let params = chain(n, e.ising_j, hx, 0.0, g, Boundary::Periodic);
                                let opts = LevelStatisticsOptions {
                                    min_sector_dim: e.min_sector_dim,
                                    exclude_reflection_symmetric: e.exclude_reflection_symmetric,
                                    bootstrap_resamples: e.bootstrap_resamples,
                                    seed,
                                };
                                let ls = core(level_statistics(&params, &opts))?;
                                let mut rec = PointRecords::new("level-stats", point);
                                rec.push(
                                    "mean_gap_ratio",
                                    None,
                                    None,
                                    ls.mean_ratio,
                                    Some(ls.sem),
                                    "dimensionless",
                                );
                                rec.scalar("n_ratios", ls.n_ratios as f64, "count");
                                rec.scalar(
                                    "max_off_block_residual",
                                    ls.max_off_block_residual,
                                    "energy / J",
                                );
                                for s in &ls.sectors {
                                    let idx = Some(s.momentum as i64 * i64::from(s.parity));
                                    rec.push(
                                        "sector_mean_gap_ratio",
                                        Some(s.dim as f64),
                                        idx,
                                        s.mean_ratio,
                                        None,
                                        "dimensionless; x = sector dim; index = k * parity",
                                    );
                                }
                                Ok(PointOutput::new(rec))
                            }),
                        });
                    }
                }
            }
        }
        Experiment::ClassicalGrowth(e) => {
            for &n in &e.n_osc {
                for &w3 in &e.omega3 {
                    out.push(Job {
                        label: label(&[("n_osc", n.to_string()), ("omega3", w3.to_string())]),
                        run: Box::new(move |point| {
                            let params =
                                OscillatorParams::new(n, e.omega1, e.omega2, w3, e.epsilon);
                            core(params.validate())?;
                            let opts = GrowthOptions {
                                t_final: e.t_final,
                                dt: e.dt.unwrap_or_else(|| params.reference_dt()),
                                record_every: e.record_every,
                                n_ensemble: e.n_ensemble,
                                seed,
                            };
                            let heat = core(perturbation_growth(&params, &opts))?;
                            let mut rec = PointRecords::new("classical-growth", point);
                            for (&t, row) in heat.times.iter().zip(&heat.mean) {
                                for (r, &d) in row.iter().enumerate() {
                                    rec.push(
                                        "mean_abs_dq",
                                        Some(t),
                                        Some(r as i64 + 1),
                                        d,
                                        None,
                                        "amplitude; x = t; index = site r",
                                    );
                                }
                            }
                            rec.scalar("dt_used", heat.dt_used, "time");
                            if let Ok(l) = lyapunov_estimate(&heat, default_window(e.epsilon)) {
                                rec.scalar("lyapunov_pooled", l.pooled, "1 / time");
                                rec.scalar(
                                    "lyapunov_relative_spread",
                                    l.relative_spread,
                                    "dimensionless",
                                );
                                for (r, v) in l.per_site.iter().enumerate() {
                                    if let Some(v) = v {
                                        rec.push(
                                            "lyapunov_site",
                                            None,
                                            Some(r as i64 + 1),
                                            *v,
                                            None,
                                            "1 / time; index = site r",
                                        );
                                    }
                                }
                            }
                            Ok(PointOutput::new(rec))
                        }),
                    });
                }
            }
        }
        Experiment::Validate(v) => {
            let ids: Vec<u32> = match &v.criteria {
                Some(ids) => ids.clone(),
                None => acceptance::CRITERIA.iter().map(|c| c.id).collect(),
            };
            for id in ids {
                out.push(Job {
                    label: label(&[("criterion", id.to_string())]),
                    run: Box::new(move |point| {
                        let outcome = acceptance::run_criterion(id).map_err(|e| e.to_string())?;
                        let mut rec = PointRecords::new("validate", point);
                        rec.scalar("passed", f64::from(u8::from(outcome.passed)), "boolean");
                        if outcome.passed {
                            Ok(PointOutput::new(rec))
                        } else {
                            Err(format!("FAIL: {}", outcome.detail))
                        }
                    }),
                });
            }
        }
    }
    out
}

fn chain(n: usize, j: f64, hx: f64, hz: f64, g: f64, boundary: Boundary) -> ChainParams {
    ChainParams {
        n_sites: n,
        ising_j: j,
        field_x: hx,
        field_z: hz,
        global_g: g,
        boundary,
    }
}

/// Collapse deviation per `N` for `markov-evolve` runs with `collapse = true`.
fn collapse_records(
    config: &ExperimentConfig,
    outputs: &[Option<(usize, CollapseCurve)>],
) -> Option<PointRecords> {
    let Experiment::MarkovEvolve(e) = &config.experiment else {
        return None;
    };
    if !e.collapse {
        return None;
    }
    let mut by_n: BTreeMap<usize, Vec<CollapseCurve>> = BTreeMap::new();
    for (n, c) in outputs.iter().flatten() {
        by_n.entry(*n).or_default().push(c.clone());
    }
    let mut rec = PointRecords::new("markov-evolve", "collapse");
    for (n, curves) in by_n {
        if let Ok(d) = collapse_check(&curves) {
            rec.push(
                "collapse_sup_deviation",
                None,
                Some(n as i64),
                d,
                None,
                "<w>/N; index = N",
            );
        }
    }
    Some(rec)
}

/// Runs every sweep point (in parallel) and writes `results.csv`,
/// `manifest.json` and any checkpoints below `root`. Point failures are
/// recorded in the manifest; only I/O errors abort.
pub fn run(config: &ExperimentConfig, root: &Path) -> io::Result<RunSummary> {
    let dir = prepare_dir(root, &config.output_subdir())?;
    let jobs = jobs(config);
    let results: Vec<(String, PointResult)> = jobs
        .par_iter()
        .map(|j| (j.label.clone(), (j.run)(&j.label)))
        .collect();

    let mut records = Vec::new();
    let mut statuses = Vec::new();
    let mut files = Vec::new();
    let mut curves = Vec::new();
    for (label, result) in results {
        match result {
            Ok(out) => {
                for c in &out.checkpoints {
                    write_checkpoint(&dir.join(&c.path), &c.header, &c.rows)?;
                    files.push(c.path.to_string_lossy().replace('\\', "/"));
                }
                statuses.push(PointStatus {
                    point: label,
                    ok: true,
                    n_records: out.records.records.len(),
                    error: None,
                });
                records.extend(out.records.records);
                curves.push(out.collapse);
            }
            Err(e) => statuses.push(PointStatus {
                point: label,
                ok: false,
                n_records: 0,
                error: Some(e),
            }),
        }
    }
    if let Some(extra) = collapse_records(config, &curves) {
        records.extend(extra.records);
    }
    write_records(&dir.join("results.csv"), &records)?;
    let manifest = Manifest {
        schema_version: crate::output::SCHEMA_VERSION,
        artifact: env!("CARGO_PKG_NAME"),
        artifact_version: env!("CARGO_PKG_VERSION"),
        config,
        points: statuses.clone(),
        files,
    };
    write_manifest(&dir.join("manifest.json"), &manifest)?;
    Ok(RunSummary {
        dir,
        points: statuses,
    })
}
