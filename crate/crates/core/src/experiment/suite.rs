use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{num, List, Outcome, Settings};
use crate::chain::Transition;
use crate::energy::{EnergyModel, FnPotential, Mass, Potential};
use crate::engine::{validate_spec, NoiseCompensation, SamplerSpec};
use crate::error::{Error, Result};
use crate::field::{FieldRole, MatrixField};
use crate::linalg::FieldMatrix;
use crate::metric::MetricSpec;
use crate::presets::{
    make_naive_sghmc, make_naive_sgrhmc, make_spec, recipe_cast_residual, riemannian_curl, riemannian_diffusion,
    PresetConfig, PresetKind, CAST_TOLERANCE,
};
use crate::schedule::StepSchedule;
use crate::state::{Layout, StateVector};
use crate::stochastic::{GradientSource, InjectedNoise};
use crate::targets::{GaussianNd, OnePeak};
use crate::verify::{
    reconstruct_q_2d, refinement_study, Axis, FieldOnGrid, Grid, GridDensity, RefinementRow,
};

/// Largest compact-form residual accepted at the finest spacing.
pub const STATIONARITY_TOLERANCE: f64 = 1e-3;
/// Accepted residual ratio when the spacing halves (second order gives 4).
pub const REFINEMENT_RATIO: (f64, f64) = (3.5, 4.5);
/// Sup-norm error accepted for a reconstructed curl on the central half-grid.
pub const RECONSTRUCTION_TOLERANCE: f64 = 1e-2;

/// One line of the verification report.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteCheck {
    pub check: String,
    pub subject: String,
    pub value: f64,
    /// Human-readable acceptance rule, e.g. `<= 1e-3`.
    pub rule: String,
    pub passed: bool,
}

impl SuiteCheck {
    fn at_most(check: &str, subject: &str, value: f64, limit: f64) -> Self {
        SuiteCheck {
            check: check.into(),
            subject: subject.into(),
            value,
            rule: format!("<= {limit:e}"),
            passed: value <= limit,
        }
    }

    fn above(check: &str, subject: &str, value: f64, limit: f64) -> Self {
        SuiteCheck {
            check: check.into(),
            subject: subject.into(),
            value,
            rule: format!("> {limit:e}"),
            passed: value > limit,
        }
    }

    fn within(check: &str, subject: &str, value: f64, (lo, hi): (f64, f64)) -> Self {
        SuiteCheck {
            check: check.into(),
            subject: subject.into(),
            value,
            rule: format!("in [{lo}, {hi}]"),
            passed: value >= lo && value <= hi,
        }
    }
}

/// A recipe checked on a grid: name, spec and the box of each axis.
struct GridCase {
    name: String,
    spec: SamplerSpec,
    lo: f64,
    hi: f64,
    /// Positive-orthant probes for metrics defined only there.
    positive: bool,
}

fn eps() -> StepSchedule {
    StepSchedule::Constant { epsilon: 0.1 }
}

fn gamma21() -> Arc<dyn Potential> {
    Arc::new(FnPotential::new(1, |t| t[0] - t[0].ln()).with_gradient(|t| vec![1.0 - 1.0 / t[0]]))
}

/// Corrected presets with state spaces of at most two dimensions.
fn corrected_cases() -> Result<Vec<GridCase>> {
    let one: Arc<dyn Potential> = Arc::new(OnePeak);
    let case = |name: &str, cfg: PresetConfig, pot: Arc<dyn Potential>, lo: f64, hi: f64, positive: bool| -> Result<GridCase> {
        Ok(GridCase {
            name: name.into(),
            spec: make_spec(pot, &cfg)?,
            lo,
            hi,
            positive,
        })
    };
    Ok(vec![
        case("sgld/one-peak", PresetConfig::new(PresetKind::Sgld, eps()), one.clone(), -5.0, 5.0, false)?,
        case(
            "sgrld/gamma(2,1)",
            PresetConfig::new(PresetKind::Sgrld, eps()).with_metric(MetricSpec::FisherDiagonal { dim: 1 }),
            gamma21(),
            0.05,
            15.0,
            true,
        )?,
        case("hmc/one-peak", PresetConfig::new(PresetKind::Hmc, eps()), one.clone(), -4.0, 4.0, false)?,
        case("sghmc/one-peak", PresetConfig::new(PresetKind::Sghmc, eps()), one.clone(), -4.0, 4.0, false)?,
        case(
            "gsgrhmc/one-peak",
            PresetConfig::new(PresetKind::Gsgrhmc, eps()).with_metric(MetricSpec::potential_level(one.clone())),
            one,
            -4.0,
            4.0,
            false,
        )?,
    ])
}

/// The naive SGRHMC recipe: the gSGRHMC fields with the `∂θ G^(−1/2)` term dropped.
fn naive_sgrhmc_recipe() -> Result<GridCase> {
    let one: Arc<dyn Potential> = Arc::new(OnePeak);
    let metric = MetricSpec::potential_level(one.clone());
    let spec = SamplerSpec::new(
        EnergyModel::new(one).with_momentum(Mass::Identity)?,
        riemannian_diffusion(&metric),
        riemannian_curl(&metric).with_divergence(|_| Ok(vec![0.0; 2])),
        NoiseCompensation::None,
        eps(),
    )?;
    Ok(GridCase {
        name: "naive-sgrhmc/one-peak".into(),
        spec,
        lo: -4.0,
        hi: 4.0,
        positive: false,
    })
}

/// `H = 2(θ² + r²)` with a curl whose symmetric part is nonzero.
fn broken_q_case() -> Result<GridCase> {
    let model = EnergyModel::new(Arc::new(
        FnPotential::new(1, |t| 2.0 * t[0] * t[0]).with_gradient(|t| vec![4.0 * t[0]]),
    ))
    .with_momentum(Mass::diagonal(vec![0.25])?)?;
    let spec = SamplerSpec::new(
        model,
        MatrixField::zero(FieldRole::Diffusion, 2),
        MatrixField::constant(
            FieldRole::Curl,
            FieldMatrix::Dense(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 0.5, 0.0])),
        ),
        NoiseCompensation::None,
        eps(),
    )?;
    Ok(GridCase {
        name: "broken-q/quadratic".into(),
        spec,
        lo: -3.0,
        hi: 3.0,
        positive: false,
    })
}

fn probes(layout: &Layout, n: usize, positive: bool, rng: &mut ChaCha8Rng) -> Vec<StateVector> {
    (0..n)
        .map(|_| {
            let mut z = StateVector::zeros(layout.clone());
            for v in z.as_mut_slice() {
                *v = rng.random_range(-3.0..3.0);
            }
            if positive {
                for t in z.theta_mut() {
                    *t = rng.random_range(0.05..5.0);
                }
            }
            z
        })
        .collect()
}

fn cube(dim: usize, lo: f64, hi: f64, h: f64) -> Result<Grid> {
    Grid::new((0..dim).map(|_| Axis::with_spacing(lo, hi, h)).collect::<Result<Vec<_>>>()?)
}

/// Structural and grid checks over every corrected preset, the two naive
/// controls and, on request, a deliberately broken curl.
#[derive(Debug)]
pub struct VerifySuite {
    seed: u64,
    probes: usize,
    spacings: Vec<f64>,
    reconstruction_spacing: f64,
    inject_broken_q: bool,
}

impl VerifySuite {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let spacings: List<f64> = s.value("", "spacings", List(vec![0.02, 0.01]))?;
        let suite = VerifySuite {
            seed: s.value("", "seed", 1u64)?,
            probes: s.value("", "probes", 1000usize)?,
            spacings: spacings.0,
            reconstruction_spacing: s.value("", "reconstruction_spacing", 0.01f64)?,
            inject_broken_q: s.value("", "inject_broken_q", false)?,
        };
        if suite.spacings.len() < 2 || suite.spacings.windows(2).any(|w| !(w[1] < w[0] && w[1] > 0.0)) {
            return Err(Error::Config("`spacings` needs at least two positive, decreasing values".into()));
        }
        if suite.probes == 0 {
            return Err(Error::Config("`probes` must be at least 1".into()));
        }
        Ok(suite)
    }

    /// Runs every check; also returns the refinement tables.
    pub fn run_checks(&self) -> Result<(Vec<SuiteCheck>, Vec<(String, Vec<RefinementRow>)>)> {
        let mut checks = Vec::new();
        let mut tables = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        // structure at random probes, SGNHT included
        let mut structural = corrected_cases()?;
        structural.push(GridCase {
            name: "sgnht/gaussian-2d".into(),
            spec: make_spec(Arc::new(GaussianNd::standard(2)), &PresetConfig::new(PresetKind::Sgnht, eps()))?,
            lo: 0.0,
            hi: 0.0,
            positive: false,
        });
        for c in &structural {
            let report = validate_spec(&c.spec, &probes(c.spec.model.layout(), self.probes, c.positive, &mut rng))?;
            let bad = report.psd_violations.len()
                + report.skew_violations.len()
                + report.gamma_mismatches.len()
                + report.evaluation_failures.len();
            checks.push(SuiteCheck::at_most("structure", &c.name, bad as f64, 0.0));
        }

        // stationarity of exp(−H) with h-refinement
        let mut stationary = corrected_cases()?;
        if self.inject_broken_q {
            stationary.push(broken_q_case()?);
        }
        for c in &stationary {
            let dim = c.spec.model.dim();
            let rows = refinement_study(&c.spec, &self.spacings, |h| cube(dim, c.lo, c.hi, h))?;
            let last = rows.last().expect("at least two spacings");
            checks.push(SuiteCheck::at_most("stationarity", &c.name, last.report.residual, STATIONARITY_TOLERANCE));
            let ratio = last.residual_ratio.unwrap_or(f64::NAN);
            checks.push(SuiteCheck::within("refinement_ratio", &c.name, ratio, REFINEMENT_RATIO));
            if c.name.starts_with("sghmc") {
                checks.push(SuiteCheck::at_most("direct_vs_compact", &c.name, last.report.gap, STATIONARITY_TOLERANCE));
            }
            tables.push((c.name.clone(), rows));
        }

        // curl reconstruction from drift, diffusion and density
        let g = cube(2, -3.0, 3.0, self.reconstruction_spacing)?;
        let p = GridDensity::from_fn(g.clone(), |z| (-0.5 * (z[0] * z[0] + z[1] * z[1])).exp())?.normalized()?;
        let diag = |c: Vec<f64>| FieldOnGrid::matrix_from_fn(&g, move |_| Ok(FieldMatrix::Diagonal(c.clone())));
        let systems = [
            ("hmc/gaussian", FieldOnGrid::vector_from_fn(&g, |z| Ok(vec![z[1], -z[0]]))?, diag(vec![0.0, 0.0])?, 1.0),
            (
                "sghmc/gaussian",
                FieldOnGrid::vector_from_fn(&g, |z| Ok(vec![z[1], -z[0] - 0.5 * z[1]]))?,
                diag(vec![0.0, 0.5])?,
                1.0,
            ),
            ("sgld/gaussian", FieldOnGrid::vector_from_fn(&g, |z| Ok(vec![-z[0], -z[1]]))?, diag(vec![1.0, 1.0])?, 0.0),
        ];
        for (name, f, d, target) in &systems {
            let rec = reconstruct_q_2d(f, d, &p, None)?;
            checks.push(SuiteCheck::at_most(
                "q_reconstruction",
                name,
                rec.q21.central_deviation(*target, 0.5),
                RECONSTRUCTION_TOLERANCE,
            ));
        }

        // naive controls must be flagged
        let one: Arc<dyn Potential> = Arc::new(OnePeak);
        let noisy: Arc<dyn GradientSource> = Arc::new(InjectedNoise::new(one.clone(), 1.0)?);
        let naive_sghmc = make_naive_sghmc(one.clone(), &PresetConfig::new(PresetKind::NaiveSghmc, eps()), noisy)?;
        let cast_probes = probes(naive_sghmc.layout(), 50, false, &mut rng);
        let r = recipe_cast_residual(&naive_sghmc, &cast_probes)?;
        checks.push(SuiteCheck::above("naive_cast", "naive-sghmc/one-peak", r.residual, CAST_TOLERANCE));
        let cfg = PresetConfig::new(PresetKind::NaiveSgrhmc, eps()).with_metric(MetricSpec::potential_level(one.clone()));
        let naive_sgrhmc = make_naive_sgrhmc(one, &cfg, None)?;
        let r = recipe_cast_residual(&naive_sgrhmc, &cast_probes)?;
        checks.push(SuiteCheck::above("naive_cast", "naive-sgrhmc/one-peak", r.residual, CAST_TOLERANCE));
        let naive = naive_sgrhmc_recipe()?;
        let h = *self.spacings.last().unwrap();
        let report = crate::verify::stationarity_residual(&naive.spec, &cube(2, naive.lo, naive.hi, h)?)?;
        checks.push(SuiteCheck::above("naive_stationarity", &naive.name, report.residual, STATIONARITY_TOLERANCE));
        Ok((checks, tables))
    }

    pub fn execute(&self, out: &Path) -> Result<Outcome> {
        let (checks, tables) = self.run_checks()?;
        let mut csv = String::from("check,subject,value,rule,passed\n");
        for c in &checks {
            writeln!(csv, "{},{},{},{},{}", c.check, c.subject, num(c.value), c.rule, c.passed).unwrap();
        }
        fs::write(out.join("verify.csv"), csv)?;

        let mut table = String::from("subject,h,compact,direct,gap,residual,residual_ratio,gap_ratio\n");
        for (name, rows) in &tables {
            for r in rows {
                let ratio = |x: Option<f64>| x.map(num).unwrap_or_default();
                writeln!(
                    table,
                    "{name},{},{},{},{},{},{},{}",
                    num(r.report.h),
                    num(r.report.compact),
                    num(r.report.direct),
                    num(r.report.gap),
                    num(r.report.residual),
                    ratio(r.residual_ratio),
                    ratio(r.gap_ratio)
                )
                .unwrap();
            }
        }
        fs::write(out.join("refinement.csv"), table)?;

        let mut text = String::new();
        for c in &checks {
            writeln!(
                text,
                "{} {:<20} {:<24} {:.3e} (want {})",
                if c.passed { "PASS" } else { "FAIL" },
                c.check,
                c.subject,
                c.value,
                c.rule
            )
            .unwrap();
        }
        writeln!(text, "\nh-refinement (compact residual):").unwrap();
        for (name, rows) in &tables {
            for r in rows {
                let order = r.residual_ratio.map(|q| format!("ratio {q:.3}, order {:.2}", q.log2())).unwrap_or_default();
                writeln!(text, "  {name:<20} h = {:<6} residual {:.3e}  {order}", r.report.h, r.report.compact).unwrap();
            }
        }
        let failed = checks.iter().filter(|c| !c.passed).count();
        writeln!(text, "\n{} checks, {} failed", checks.len(), failed).unwrap();
        fs::write(out.join("verify_report.txt"), &text)?;
        Ok(Outcome {
            summary: text.lines().map(String::from).collect(),
            verification_failed: failed > 0,
            divergences: Vec::new(),
        })
    }
}
