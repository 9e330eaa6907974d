//! Dispatch from a validated config to the library routines.

use crate::config::{ExperimentConfig, ExperimentKind, Resolved};
use crate::record::{Provenance, ResultRecord, Scalar, Series, Verdict};
use lcft::gff::{centred_projection, field_scales, sample_gff};
use lcft::gmc::{convergence_study, delta_floor, moment_study, GmcSetup, Region};
use lcft::lcft::{kpz_check, mobius_covariance_check, weyl_covariance_check, CovarianceReport, FieldModel};
use lcft::rng::StreamId;
use lcft::spectral::fd::FdGreen;
use lcft::spectral::{build_basis_cutoff, green_variation, SpectralBasis, Taper};
use lcft::stats::{pairwise_sum, Estimate};
use lcft::ward::{
    beltrami_solve_linear, ward_n1_check, ContourSpec, KillingInverse, TorusFourier, WardConfig, BELTRAMI_ORDER,
};
use lcft::{make_surface, par, Complex64};
use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Default)]
struct Outcome {
    scalars: BTreeMap<String, Scalar>,
    series: BTreeMap<String, Series>,
    verdicts: Vec<Verdict>,
}

impl Outcome {
    fn scalar(&mut self, name: impl Into<String>, value: f64) {
        self.scalars.insert(name.into(), Scalar { value, stderr: None });
    }

    fn estimate(&mut self, name: impl Into<String>, e: Estimate) {
        self.scalars.insert(name.into(), Scalar { value: e.value, stderr: Some(e.stderr) });
    }

    fn verdict(&mut self, name: &str, measured: f64, threshold: f64, detail: String) {
        let pass = measured.abs() < threshold;
        self.verdicts.push(Verdict { name: name.into(), pass, measured, threshold, detail });
    }

    fn covariance(&mut self, r: &CovarianceReport, sigmas: f64) {
        self.estimate("measured", r.measured);
        self.scalar("predicted", r.predicted);
        self.scalar("anomaly", r.anomaly);
        self.scalar("weight_term", r.weight_term);
        let detail = format!("log-ratio {:.6} ± {:.6} vs {:.6}", r.measured.value, r.measured.stderr, r.predicted);
        self.verdict("covariance", r.z_score, sigmas, detail);
    }
}

/// Validates, runs, and assembles the record (not yet written to disk).
pub fn run(cfg: &ExperimentConfig) -> Result<ResultRecord, RunError> {
    let r = cfg.validate()?;
    let start = Instant::now();
    let out = dispatch(cfg, &r)?;
    let mut record = ResultRecord {
        config_hash: cfg.hash(),
        experiment: cfg.experiment.name().to_string(),
        scalars: out.scalars,
        series: out.series,
        verdicts: out.verdicts,
        provenance: Provenance {
            seed: cfg.seed,
            workers: par::default_workers(),
            streams: "ChaCha8 keyed by (seed, sample index)".into(),
            wall_clock_s: start.elapsed().as_secs_f64(),
        },
        record_hash: String::new(),
    };
    record.record_hash = record.compute_hash();
    Ok(record)
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("compute error: {0}")]
    Compute(#[from] lcft::Error),
}

fn basis(r: &Resolved) -> lcft::Result<Arc<SpectralBasis>> {
    Ok(Arc::new(build_basis_cutoff(&make_surface(r.kind, r.resolution)?, r.cutoff)?))
}

fn c(z: [f64; 2]) -> Complex64 {
    Complex64::new(z[0], z[1])
}

fn dispatch(cfg: &ExperimentConfig, r: &Resolved) -> lcft::Result<Outcome> {
    let p = &cfg.physics;
    let nm = &cfg.numerics;
    let mut out = Outcome::default();
    match cfg.experiment {
        ExperimentKind::GreenVariation => {
            let b = basis(r)?;
            let f = p.f.as_ref().expect("validated").field();
            let (x, y) = (c(p.points[0]), c(p.points[1]));
            let formula = green_variation(&b, &f, x, y)?;
            out.scalar("formula", formula);
            let mut eps = if nm.epsilons.is_empty() { vec![1e-2, 1e-3] } else { nm.epsilons.clone() };
            eps.sort_by(|a, b| b.total_cmp(a));
            let mut fd = FdGreen::new(r.resolution)?;
            let mut series = Series::new(&["epsilon", "fd", "formula"]);
            let mut last = f64::NAN;
            for e in &eps {
                last = fd.variation(&f, x, y, *e)?;
                series.push(vec![*e, last, formula]);
            }
            out.scalar("fd_finest", last);
            let rel = (formula - last).abs() / last.abs().max(f64::MIN_POSITIVE);
            out.series.insert("fd_vs_eps".into(), series);
            out.verdict("relative_error", rel, r.tolerance, format!("ε = {:e}", eps[eps.len() - 1]));
        }
        ExperimentKind::GffCov => {
            let b = basis(r)?;
            let s = b.surface();
            let scales = field_scales(&b, Taper::Sharp);
            let pairs: Vec<(Vec<f64>, Vec<f64>)> = p
                .pairs
                .iter()
                .map(|pp| {
                    let fp = centred_projection(&b, &s.sample_field(&pp.f.field()));
                    let hp = centred_projection(&b, &s.sample_field(&pp.h.field()));
                    (fp, hp)
                })
                .collect();
            let dot = |u: &[f64], v: &[f64]| pairwise_sum(&u.iter().zip(v).map(|(a, b)| a * b).collect::<Vec<_>>());
            let products: Vec<Vec<f64>> = par::map_indices(r.samples, par::default_workers(), |i| {
                let g = sample_gff(&b, StreamId::new(cfg.seed, i as u64));
                let x = g.field_coefficients();
                pairs.iter().map(|(fp, hp)| dot(fp, &x) * dot(hp, &x)).collect()
            });
            let mut series = Series::new(&["pair", "mc", "stderr", "oracle"]);
            for (k, (fp, hp)) in pairs.iter().enumerate() {
                let col: Vec<f64> = products.iter().map(|v| v[k]).collect();
                let est = Estimate::of_mean(&col);
                let terms: Vec<f64> = (0..fp.len()).map(|n| scales[n] * scales[n] * fp[n] * hp[n]).collect();
                let oracle = pairwise_sum(&terms);
                out.estimate(format!("pair{k}.covariance"), est);
                out.scalar(format!("pair{k}.oracle"), oracle);
                series.push(vec![k as f64, est.value, est.stderr, oracle]);
                let detail = format!("{:.6e} ± {:.2e} vs {:.6e}", est.value, est.stderr, oracle);
                out.verdict(&format!("pair{k}"), est.z_score(oracle, 0.0), nm.sigmas, detail);
            }
            out.series.insert("covariance".into(), series);
        }
        ExperimentKind::GmcMoment => {
            let b = basis(r)?;
            let gamma = p.gamma.expect("validated");
            let reg = p.region.expect("validated");
            let region = Region::square(b.surface(), c(reg.center), reg.half);
            if region.is_empty() {
                return Err(lcft::Error::Config("physics.region contains no quadrature nodes".into()));
            }
            let delta = nm.delta.unwrap_or_else(|| delta_floor(&b));
            let setup = GmcSetup::new(&b, gamma, delta)?;
            for m in moment_study(&setup, &region, r.samples, cfg.seed, nm.second_moment) {
                let name = format!("moment{}", m.order);
                out.estimate(&name, m.estimate);
                out.scalar(format!("{name}.oracle"), m.oracle);
                let detail = format!("{:.6} ± {:.6} vs {:.6}", m.estimate.value, m.estimate.stderr, m.oracle);
                out.verdict(&name, m.z_score, nm.sigmas, detail);
            }
            if !nm.deltas.is_empty() {
                let st = convergence_study(&b, gamma, &nm.deltas, r.samples, cfg.seed)?;
                let mut mass = Series::new(&["delta", "mean_mass", "stderr"]);
                for (d, e) in st.deltas.iter().zip(&st.mean_mass) {
                    mass.push(vec![*d, e.value, e.stderr]);
                }
                let mut inc = Series::new(&["delta", "mean_abs_increment", "stderr"]);
                for (d, e) in st.deltas[1..].iter().zip(&st.mean_abs_increment) {
                    inc.push(vec![*d, e.value, e.stderr]);
                }
                out.series.insert("mass_vs_delta".into(), mass);
                out.series.insert("mass_increment_vs_delta".into(), inc);
                out.scalar("tail_index", st.tail_index);
            }
        }
        ExperimentKind::Kpz => {
            let b = basis(r)?;
            let model = FieldModel::new(&b, cfg.surface.taper);
            let rep = kpz_check(&cfg.spec_for(r.kind)?, &model, r.samples, cfg.seed, nm.sampler)?;
            out.estimate("ratio", rep.ratio);
            out.estimate("lhs_over_base", rep.lhs_over_base);
            out.scalar("predicted", rep.predicted);
            let detail = format!("ratio {:.6} ± {:.6}", rep.ratio.value, rep.ratio.stderr);
            out.verdict("kpz_ratio", rep.ratio.z_score(1.0, 0.0), nm.sigmas, detail);
        }
        ExperimentKind::Weyl => {
            let b = basis(r)?;
            let model = FieldModel::new(&b, cfg.surface.taper);
            let omega = cfg.omega().expect("validated");
            let rep = weyl_covariance_check(&cfg.spec_for(r.kind)?, &omega, &model, r.samples, cfg.seed, nm.sampler)?;
            out.covariance(&rep, nm.sigmas);
        }
        ExperimentKind::Mobius => {
            let b = basis(r)?;
            let model = FieldModel::new(&b, cfg.surface.taper);
            let psi = p.mobius.expect("validated").map();
            let rep = mobius_covariance_check(&cfg.spec_for(r.kind)?, &psi, &model, r.samples, cfg.seed, nm.sampler)?;
            out.covariance(&rep, nm.sigmas);
        }
        ExperimentKind::Beltrami => {
            let f = p.f.as_ref().expect("validated").field();
            let tf = TorusFourier::new(r.resolution)?;
            let mu: Vec<Complex64> = tf.points().iter().map(|z| f.components(r.kind, *z).0).collect();
            let sol = beltrami_solve_linear(&mu, r.resolution, BELTRAMI_ORDER)?;
            let mut series = Series::new(&["order", "residual"]);
            for (k, res) in sol.residuals.iter().enumerate() {
                series.push(vec![(k + 1) as f64, *res]);
            }
            out.series.insert("residual_vs_order".into(), series);
            out.scalar("affine.re", sol.affine.re);
            out.scalar("affine.im", sol.affine.im);
            out.verdict("residual", sol.residual(), r.tolerance, format!("order {BELTRAMI_ORDER}"));
        }
        ExperimentKind::Killing => {
            let f = p.f.as_ref().expect("validated").field();
            let k = KillingInverse::new(r.resolution)?;
            let fv = k.sample(&f);
            let sol = k.apply(&fv);
            let worst = k.identity_residual(&fv).max(k.green_residual(&fv));
            out.scalar("moduli.re", sol.moduli.re);
            out.scalar("moduli.im", sol.moduli.im);
            let mut grid = Series::new(&["x", "y", "u_re", "u_im"]);
            for (z, u) in k.fourier().points().iter().zip(&sol.u) {
                grid.push(vec![z.re, z.im, u.re, u.im]);
            }
            out.series.insert("solution".into(), grid);
            out.verdict("fourier_residual", worst, r.tolerance, "max of identity and Green residuals".into());
        }
        ExperimentKind::WardN1 => {
            let b = basis(r)?;
            let model = FieldModel::new(&b, cfg.surface.taper);
            let mut wc = WardConfig::new(p.points.iter().map(|z| c(*z)).collect(), nm.radius.expect("validated"));
            wc.contour = nm.contour.map(|k| ContourSpec { insertion: k.insertion, radius: k.radius, nodes: k.nodes });
            let rep = ward_n1_check(&cfg.spec_for(r.kind)?, &model, &wc, r.samples, cfg.seed, nm.sampler)?;
            let mut dev = Series::new(&["z_re", "z_im", "rel_dev", "rel_err"]);
            for pt in &rep.points {
                dev.push(vec![pt.z.re, pt.z.im, pt.rel_dev, pt.rel_err]);
            }
            let mut pv = Series::new(&["radius", "insertion", "d_re", "d_im", "stderr"]);
            for e in &rep.pv {
                for (j, d) in e.derivatives.iter().enumerate() {
                    pv.push(vec![e.radius, j as f64, d.value.re, d.value.im, d.stderr]);
                }
            }
            out.series.insert("rel_dev_vs_z".into(), dev);
            out.series.insert("pv_derivatives".into(), pv);
            out.scalar("max_rel_dev", rep.max_rel_dev);
            out.scalar("ess", rep.ess);
            if let Some(k) = &rep.contour {
                out.scalar("contour.measured", k.measured.value.re);
                out.scalar("contour.predicted", k.predicted);
            }
            out.verdict("max_rel_dev", rep.max_rel_dev, r.tolerance, "largest per-z relative deviation".into());
            let pv_pass = rep.pv_consistent;
            out.verdicts.push(Verdict {
                name: "pv_consistent".into(),
                pass: pv_pass,
                measured: if pv_pass { 0.0 } else { 1.0 },
                threshold: 0.5,
                detail: "paired derivative estimates at r, r/2, r/4 agree within 3 stderr".into(),
            });
        }
    }
    Ok(out)
}
