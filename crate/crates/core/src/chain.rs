//! Running chains and persisting their traces.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::energy::EnergyModel;
use crate::engine::{standard_normals, step_full_data, step_minibatch, SamplerSpec};
use crate::error::{Error, Result};
use crate::state::{BlockKind, Layout, StateVector};
use crate::stochastic::GradientSource;

/// One Markov transition `z ↦ z'`.
pub trait Transition: Send + Sync {
    fn name(&self) -> &str;
    fn model(&self) -> &EnergyModel;
    fn epsilon(&self, t: usize) -> f64;
    fn step(&self, z: &StateVector, t: usize, rng: &mut dyn RngCore) -> Result<StateVector>;

    fn layout(&self) -> &Layout {
        self.model().layout()
    }
}

/// Starting state: `θ` as given, momentum drawn from `N(0, M)`, thermostat at `A`.
pub fn initial_state(model: &EnergyModel, theta: &[f64], rng: &mut dyn RngCore) -> Result<StateVector> {
    let d = model.theta_dim();
    if theta.len() != d {
        return Err(Error::dimension("initial θ", d, theta.len()));
    }
    let mut z = StateVector::zeros(model.layout().clone());
    z.theta_mut().copy_from_slice(theta);
    if z.layout().contains(BlockKind::Momentum) {
        refresh_momentum(model, &mut z, rng);
    }
    if let (Some(a), Some(xi)) = (model.thermostat_target(), z.block_mut(BlockKind::Thermostat)) {
        xi.fill(a);
    }
    Ok(z)
}

/// Replaces the momentum block with a draw from `N(0, M)`.
pub fn refresh_momentum(model: &EnergyModel, z: &mut StateVector, rng: &mut dyn RngCore) {
    if let Some(r) = z.block_mut(BlockKind::Momentum) {
        let normals = standard_normals(r.len(), rng);
        r.copy_from_slice(&model.mass().momentum_from_normals(&normals));
    }
}

/// Whether momentum is resampled before step `t` when refreshing every `every` steps.
pub fn refresh_due(every: Option<usize>, t: usize) -> bool {
    matches!(every, Some(l) if l > 0 && t > 0 && t.is_multiple_of(l))
}

/// Constraint applied to `θ` after each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    None,
    /// `θᵢ ← |θᵢ|` (zero mapped to `1e-10`); the matching momentum flips sign.
    ReflectPositive,
}

/// Smallest value a reflected coordinate may take.
pub const REFLECTION_FLOOR: f64 = 1e-10;

impl Boundary {
    pub fn apply(&self, z: &mut StateVector) {
        if *self == Boundary::None {
            return;
        }
        let d = z.layout().theta_dim();
        let mut flipped = Vec::new();
        for (i, t) in z.theta_mut().iter_mut().enumerate() {
            if *t < 0.0 {
                *t = -*t;
                flipped.push(i);
            }
            if *t == 0.0 {
                *t = REFLECTION_FLOOR;
            }
        }
        if let Some(r) = z.block_mut(BlockKind::Momentum) {
            debug_assert_eq!(r.len(), d);
            for i in flipped {
                r[i] = -r[i];
            }
        }
    }
}

/// Engine-driven sampler: a [`SamplerSpec`] plus an optional stochastic
/// gradient, momentum resampling and a boundary rule.
#[derive(Clone)]
pub struct RecipeSampler {
    name: String,
    spec: SamplerSpec,
    gradients: Option<Arc<dyn GradientSource>>,
    refresh_every: Option<usize>,
    boundary: Boundary,
}

impl fmt::Debug for RecipeSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RecipeSampler")
            .field("name", &self.name)
            .field("stochastic", &self.gradients.is_some())
            .field("refresh_every", &self.refresh_every)
            .field("boundary", &self.boundary)
            .finish()
    }
}

impl RecipeSampler {
    pub fn new(name: impl Into<String>, spec: SamplerSpec) -> Self {
        Self {
            name: name.into(),
            spec,
            gradients: None,
            refresh_every: None,
            boundary: Boundary::None,
        }
    }

    pub fn with_gradients(mut self, gradients: Arc<dyn GradientSource>) -> Result<Self> {
        if gradients.dim() != self.spec.model.theta_dim() {
            return Err(Error::dimension("gradient source", self.spec.model.theta_dim(), gradients.dim()));
        }
        self.gradients = Some(gradients);
        Ok(self)
    }

    /// Resample momentum before every `l`-th step; `0` disables.
    pub fn with_refresh(mut self, l: usize) -> Self {
        self.refresh_every = (l > 0).then_some(l);
        self
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn spec(&self) -> &SamplerSpec {
        &self.spec
    }

    pub fn gradients(&self) -> Option<&Arc<dyn GradientSource>> {
        self.gradients.as_ref()
    }
}

impl Transition for RecipeSampler {
    fn name(&self) -> &str {
        &self.name
    }

    fn model(&self) -> &EnergyModel {
        &self.spec.model
    }

    fn epsilon(&self, t: usize) -> f64 {
        self.spec.schedule.epsilon(t)
    }

    fn step(&self, z: &StateVector, t: usize, rng: &mut dyn RngCore) -> Result<StateVector> {
        let mut current;
        let z = if refresh_due(self.refresh_every, t) {
            current = z.clone();
            refresh_momentum(&self.spec.model, &mut current, rng);
            &current
        } else {
            z
        };
        let mut next = match &self.gradients {
            Some(source) => {
                let grad_u = source.gradient(z.theta(), rng)?;
                let grad_h = self.spec.model.grad_with_potential_gradient(z, &grad_u)?;
                step_minibatch(&self.spec, z, t, grad_h.as_slice(), rng)?
            }
            None => step_full_data(&self.spec, z, t, rng)?,
        };
        self.boundary.apply(&mut next);
        Ok(next)
    }
}

/// How a chain records its states.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainOptions {
    pub n_steps: usize,
    pub record_every: usize,
    /// Record the starting state as step 0.
    pub record_initial: bool,
    /// Keep the momentum/thermostat blocks alongside `θ`.
    pub keep_auxiliary: bool,
}

impl ChainOptions {
    pub fn new(n_steps: usize) -> Self {
        Self {
            n_steps,
            record_every: 1,
            record_initial: false,
            keep_auxiliary: false,
        }
    }

    pub fn record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    pub fn record_initial(mut self, yes: bool) -> Self {
        self.record_initial = yes;
        self
    }

    pub fn keep_auxiliary(mut self, yes: bool) -> Self {
        self.keep_auxiliary = yes;
        self
    }
}

/// Where and why a chain stopped early.
#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    pub step: usize,
    pub message: String,
}

/// Recorded samples of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub sampler: String,
    pub seed: u64,
    pub theta_dim: usize,
    pub steps: Vec<usize>,
    pub epsilons: Vec<f64>,
    /// `θ` at each recorded step.
    pub states: Vec<Vec<f64>>,
    /// Remaining blocks at each recorded step, when kept.
    pub auxiliary: Option<Vec<Vec<f64>>>,
    pub divergence: Option<Divergence>,
    pub final_state: Option<StateVector>,
}

impl Trace {
    fn empty(sampler: &str, seed: u64, theta_dim: usize, keep_auxiliary: bool) -> Self {
        Self {
            sampler: sampler.to_string(),
            seed,
            theta_dim,
            steps: Vec::new(),
            epsilons: Vec::new(),
            states: Vec::new(),
            auxiliary: keep_auxiliary.then(Vec::new),
            divergence: None,
            final_state: None,
        }
    }

    fn record(&mut self, step: usize, epsilon: f64, z: &StateVector) {
        self.steps.push(step);
        self.epsilons.push(epsilon);
        self.states.push(z.theta().to_vec());
        if let Some(aux) = &mut self.auxiliary {
            let range = z.layout().range(BlockKind::Theta).unwrap();
            let rest: Vec<f64> = z
                .as_slice()
                .iter()
                .enumerate()
                .filter(|(i, _)| !range.contains(i))
                .map(|(_, v)| *v)
                .collect();
            aux.push(rest);
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }

    /// Samples of coordinate `i` of `θ`.
    pub fn theta_column(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[i]).collect()
    }

    /// Keeps every `k`-th record, starting from the first.
    pub fn thinned(&self, k: usize) -> Trace {
        let k = k.max(1);
        let pick = |len: usize| (0..len).step_by(k);
        Trace {
            steps: pick(self.steps.len()).map(|i| self.steps[i]).collect(),
            epsilons: pick(self.epsilons.len()).map(|i| self.epsilons[i]).collect(),
            states: pick(self.states.len()).map(|i| self.states[i].clone()).collect(),
            auxiliary: self
                .auxiliary
                .as_ref()
                .map(|a| pick(a.len()).map(|i| a[i].clone()).collect()),
            ..self.clone()
        }
    }

    /// Writes `step,epsilon,theta_0,…` and a `<path>.meta` sidecar with `key = value` lines.
    pub fn write_csv(&self, path: impl AsRef<Path>, extra_meta: &[(String, String)]) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(fs::File::create(path)?);
        write!(w, "step,epsilon")?;
        for i in 0..self.theta_dim {
            write!(w, ",theta_{i}")?;
        }
        writeln!(w)?;
        for ((step, eps), s) in self.steps.iter().zip(&self.epsilons).zip(&self.states) {
            write!(w, "{step},{eps:.16e}")?;
            for v in s {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;

        let mut m = BufWriter::new(fs::File::create(meta_path(path))?);
        writeln!(m, "sampler = {}", self.sampler)?;
        writeln!(m, "seed = {}", self.seed)?;
        writeln!(m, "theta_dim = {}", self.theta_dim)?;
        writeln!(m, "records = {}", self.len())?;
        match &self.divergence {
            Some(d) => writeln!(m, "diverged_at = {}", d.step)?,
            None => writeln!(m, "diverged_at = none")?,
        }
        for (k, v) in extra_meta {
            writeln!(m, "{k} = {v}")?;
        }
        m.flush()?;
        Ok(())
    }

    /// Reads a trace written by [`Trace::write_csv`]; metadata is read when present.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Trace> {
        let path = path.as_ref();
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty trace file".into(),
        })??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[0] != "step" || cols[1] != "epsilon" {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected trace header `{header}`"),
            });
        }
        let theta_dim = cols.len() - 2;
        let mut trace = Trace::empty("", 0, theta_dim, false);
        for (n, line) in lines.enumerate() {
            let line = line?;
            let bad = |message: String| Error::Parse { line: n + 2, message };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(bad(format!("expected {} columns, found {}", cols.len(), fields.len())));
            }
            trace.steps.push(fields[0].parse().map_err(|e| bad(format!("step: {e}")))?);
            trace.epsilons.push(fields[1].parse().map_err(|e| bad(format!("epsilon: {e}")))?);
            trace.states.push(
                fields[2..]
                    .iter()
                    .map(|f| f.parse::<f64>().map_err(|e| bad(format!("`{f}`: {e}"))))
                    .collect::<Result<_>>()?,
            );
        }
        if let Ok(meta) = fs::read_to_string(meta_path(path)) {
            for line in meta.lines() {
                if let Some((k, v)) = line.split_once('=') {
                    match k.trim() {
                        "sampler" => trace.sampler = v.trim().to_string(),
                        "seed" => trace.seed = v.trim().parse().unwrap_or(0),
                        "diverged_at" => {
                            if let Ok(step) = v.trim().parse() {
                                trace.divergence = Some(Divergence {
                                    step,
                                    message: "recorded in metadata".into(),
                                });
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(trace)
    }
}

/// `<path>.meta`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Runs `n_steps` transitions from `init` with a `ChaCha8Rng` seeded by `seed`.
///
/// A non-finite state or a domain failure stops the chain and returns the
/// partial trace with [`Trace::divergence`] set; other errors propagate.
pub fn run_chain(sampler: &dyn Transition, init: StateVector, options: ChainOptions, seed: u64) -> Result<Trace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_chain_with_rng(sampler, init, options, seed, &mut rng)
}

/// [`run_chain`] with a caller-supplied rng; `seed` is only recorded.
pub fn run_chain_with_rng(
    sampler: &dyn Transition,
    init: StateVector,
    options: ChainOptions,
    seed: u64,
    rng: &mut dyn RngCore,
) -> Result<Trace> {
    if options.n_steps == 0 {
        return Err(Error::Config("a chain needs at least one step".into()));
    }
    if options.record_every == 0 {
        return Err(Error::Config("record_every must be at least 1".into()));
    }
    if init.layout() != sampler.layout() {
        return Err(Error::dimension("initial state", sampler.layout().dim(), init.dim()));
    }
    let mut trace = Trace::empty(
        sampler.name(),
        seed,
        sampler.layout().theta_dim(),
        options.keep_auxiliary,
    );
    if options.record_initial {
        trace.record(0, sampler.epsilon(0), &init);
    }
    let mut z = init;
    for t in 0..options.n_steps {
        match sampler.step(&z, t, rng) {
            Ok(next) => z = next,
            Err(e @ (Error::NonFinite { .. } | Error::Domain(_) | Error::Numeric(_))) => {
                trace.divergence = Some(Divergence {
                    step: t + 1,
                    message: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        }
        if (t + 1) % options.record_every == 0 {
            trace.record(t + 1, sampler.epsilon(t), &z);
        }
    }
    trace.final_state = Some(z);
    Ok(trace)
}

/// Runs one chain per `(init, seed)` pair in parallel.
pub fn run_chains(
    sampler: &dyn Transition,
    inits: Vec<StateVector>,
    options: ChainOptions,
    seeds: &[u64],
) -> Result<Vec<Trace>> {
    if inits.len() != seeds.len() {
        return Err(Error::dimension("chain seeds", inits.len(), seeds.len()));
    }
    inits
        .into_par_iter()
        .zip(seeds.par_iter())
        .map(|(init, &seed)| run_chain(sampler, init, options, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::Mass;
    use crate::engine::NoiseCompensation;
    use crate::field::{FieldRole, MatrixField};
    use crate::linalg::FieldMatrix;
    use crate::schedule::StepSchedule;
    use crate::targets::OnePeak;

    fn sgld(eps: f64) -> RecipeSampler {
        let spec = SamplerSpec::new(
            EnergyModel::new(Arc::new(OnePeak)),
            MatrixField::constant(FieldRole::Diffusion, FieldMatrix::identity(1)),
            MatrixField::zero(FieldRole::Curl, 1),
            NoiseCompensation::None,
            StepSchedule::constant(eps).unwrap(),
        )
        .unwrap();
        RecipeSampler::new("sgld", spec)
    }

    #[test]
    fn zero_steps_rejected_one_step_recorded() {
        let s = sgld(0.1);
        let init = StateVector::theta_only(vec![0.0]);
        assert!(run_chain(&s, init.clone(), ChainOptions::new(0), 1).is_err());
        let t = run_chain(&s, init.clone(), ChainOptions::new(1), 1).unwrap();
        assert_eq!(t.len(), 1);
        let t = run_chain(&s, init, ChainOptions::new(1).record_initial(true), 1).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.steps, vec![0, 1]);
    }

    #[test]
    fn identical_seeds_reproduce_bitwise() {
        let s = sgld(0.1);
        let init = StateVector::theta_only(vec![0.3]);
        let a = run_chain(&s, init.clone(), ChainOptions::new(500).record_every(3), 99).unwrap();
        let b = run_chain(&s, init.clone(), ChainOptions::new(500).record_every(3), 99).unwrap();
        assert_eq!(a, b);
        let c = run_chain(&s, init, ChainOptions::new(500).record_every(3), 100).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn divergence_returns_partial_trace() {
        let s = sgld(5.0);
        let mut huge = StateVector::theta_only(vec![1e200]);
        huge.theta_mut()[0] = 1e300;
        let t = run_chain(&s, huge, ChainOptions::new(100), 0).unwrap();
        let d = t.divergence.as_ref().expect("should diverge");
        assert!(d.step >= 1 && d.step < 100);
        assert_eq!(t.len(), d.step - 1);
    }

    #[test]
    fn reflection_flips_momentum() {
        let mut z = StateVector::unflatten(Layout::with_momentum(2), vec![-0.5, 0.0, 1.0, 2.0]).unwrap();
        Boundary::ReflectPositive.apply(&mut z);
        assert_eq!(z.as_slice(), &[0.5, REFLECTION_FLOOR, -1.0, 2.0]);
    }

    #[test]
    fn refresh_schedule() {
        assert!(!refresh_due(Some(50), 0));
        assert!(refresh_due(Some(50), 50));
        assert!(!refresh_due(Some(50), 51));
        assert!(!refresh_due(None, 50));
    }

    #[test]
    fn initial_state_sets_thermostat() {
        let model = EnergyModel::new(Arc::new(OnePeak))
            .with_momentum(Mass::Identity)
            .unwrap()
            .with_thermostat(2.5)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = initial_state(&model, &[0.4], &mut rng).unwrap();
        assert_eq!(z.theta(), &[0.4]);
        assert_eq!(z.block(BlockKind::Thermostat).unwrap(), &[2.5]);
    }

    #[test]
    fn csv_round_trip() {
        let s = sgld(0.1);
        let t = run_chain(&s, StateVector::theta_only(vec![0.3]), ChainOptions::new(20), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        t.write_csv(&path, &[("preset".into(), "sgld".into())]).unwrap();
        let back = Trace::read_csv(&path).unwrap();
        assert_eq!(back.states, t.states);
        assert_eq!(back.steps, t.steps);
        assert_eq!(back.seed, 4);
        assert_eq!(back.sampler, "sgld");
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("step,epsilon,theta_0\n"));
    }

    #[test]
    fn parallel_chains_match_sequential() {
        let s = sgld(0.1);
        let inits = vec![StateVector::theta_only(vec![0.0]); 3];
        let par = run_chains(&s, inits.clone(), ChainOptions::new(200), &[1, 2, 3]).unwrap();
        for (t, seed) in par.iter().zip([1, 2, 3]) {
            assert_eq!(*t, run_chain(&s, inits[0].clone(), ChainOptions::new(200), seed).unwrap());
        }
    }
}
