//! Run configuration and the pipeline commands behind the `psweave` binary.
//!
//! Every command reads one JSON run config, writes its outputs under the
//! output directory and returns the paths it wrote. Seeds for each stage are
//! derived from the single run seed, so a rerun with the same config is
//! byte-identical.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assess::{self, AssessError, FitAssessment};
use crate::data::{self, format_value, DataError, TrialDataset, Variable};
use crate::diagnostics::{self, DiagnosticError};
use crate::econ::{self, EconError, Evaluation};
use crate::model::{build_model, ModelError, ModelInstance, ModelSpec};
use crate::qas::{self, QasError};
use crate::sampler::{self, Chains, SamplerConfig, SamplerError};
use crate::synth::{self, Amputation, SynthError, Truth};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Qas(#[from] QasError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("arm {arm}: {share:.3} of transitions diverged; draws written but unreliable")]
    Unreliable { arm: u8, share: f64 },
    #[error(transparent)]
    Diagnostic(#[from] DiagnosticError),
    #[error(transparent)]
    Assess(#[from] AssessError),
    #[error(transparent)]
    Econ(#[from] EconError),
    #[error("input file not found: {0}")]
    MissingInput(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    /// Stable machine-readable code.
    pub fn code(&self) -> String {
        match self {
            CliError::Config(_) => "config".into(),
            CliError::Data(e) => format!("data.{}", e.code()),
            CliError::Qas(_) => "qas".into(),
            CliError::Synth(_) => "synth".into(),
            CliError::Model(_) => "model".into(),
            CliError::Sampler(SamplerError::Config(_)) => "sampler.config".into(),
            CliError::Sampler(_) => "sampler".into(),
            CliError::Unreliable { .. } => "sampler.unreliable".into(),
            CliError::Diagnostic(_) => "diagnostics".into(),
            CliError::Assess(_) => "assess".into(),
            CliError::Econ(_) => "econ".into(),
            CliError::MissingInput(_) => "input.missing".into(),
            CliError::Io { .. } => "io".into(),
        }
    }

    /// 2 for bad input, 3 for unreliable sampling, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_)
            | CliError::Data(_)
            | CliError::Qas(_)
            | CliError::Synth(_)
            | CliError::Model(_)
            | CliError::MissingInput(_)
            | CliError::Sampler(SamplerError::Config(_) | SamplerError::DrawFile(_)) => 2,
            CliError::Unreliable { .. } => 3,
            _ => 4,
        }
    }

    /// One line: `error code=<code> exit=<n>: <message>`.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error code={} exit={}: {msg}", self.code(), self.exit_code())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// A preset name or a full spec object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpecChoice {
    Preset(Preset),
    Custom(ModelSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Original,
    Alternative,
}

impl SpecChoice {
    pub fn resolve(&self) -> ModelSpec {
        match self {
            SpecChoice::Preset(Preset::Original) => ModelSpec::original(),
            SpecChoice::Preset(Preset::Alternative) => ModelSpec::alternative(),
            SpecChoice::Custom(s) => s.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for KGrid {
    fn default() -> Self {
        KGrid { start: 0.0, stop: 200_000.0, step: 1000.0 }
    }
}

impl KGrid {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        if !(self.step > 0.0 && self.stop >= self.start && self.start >= 0.0) {
            return Err(CliError::Config("k_grid needs 0 <= start <= stop and step > 0".into()));
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.start + i as f64 * self.step).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    /// Truth file; the default truth for the run spec when absent.
    pub truth: Option<PathBuf>,
    pub n_per_arm: usize,
    pub amputation: Amputation,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { truth: None, n_per_arm: 300, amputation: Amputation::uniform(0.2) }
    }
}

/// Everything one analysis needs. Relative paths resolve against the
/// config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub spec: SpecChoice,
    /// Further specs fitted and compared by `assess`.
    pub compare: Vec<SpecChoice>,
    pub seed: u64,
    pub sampler: SamplerConfig,
    /// Wide outcome CSV; `<out>/data.csv` when absent.
    pub data: Option<PathBuf>,
    /// Long utility/survival series for `derive-qas`.
    pub series: Option<PathBuf>,
    /// `id,c_drug,c_hos,c_ae` costs for `derive-qas`.
    pub costs: Option<PathBuf>,
    pub time_unit: f64,
    pub out: PathBuf,
    pub k: f64,
    pub k_grid: KGrid,
    pub n_mc: usize,
    pub ppc_replicates: usize,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            spec: SpecChoice::Preset(Preset::Original),
            compare: vec![SpecChoice::Preset(Preset::Alternative)],
            seed: 1,
            sampler: SamplerConfig::default(),
            data: None,
            series: None,
            costs: None,
            time_unit: 1.0,
            out: PathBuf::from("psweave-out"),
            k: 55_000.0,
            k_grid: KGrid::default(),
            n_mc: 1000,
            ppc_replicates: 200,
            simulate: SimulateConfig::default(),
        }
    }
}

/// Command-line overrides of config fields.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub chains: Option<usize>,
    pub iters: Option<usize>,
    pub warmup: Option<usize>,
    pub k: Option<f64>,
    pub n_mc: Option<usize>,
    pub spec: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut c: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut c.data, &mut c.series, &mut c.costs, &mut c.simulate.truth].into_iter().flatten() {
            fix(p);
        }
        fix(&mut c.out);
        Ok(c)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(n) = o.chains {
            self.sampler.chains = n;
        }
        if let Some(n) = o.iters {
            self.sampler.iterations = n;
        }
        if let Some(n) = o.warmup {
            self.sampler.warmup = n;
        }
        if let Some(k) = o.k {
            self.k = k;
        }
        if let Some(n) = o.n_mc {
            self.n_mc = n;
        }
        match o.spec.as_deref() {
            None => {}
            Some("original") => self.spec = SpecChoice::Preset(Preset::Original),
            Some("alternative") => self.spec = SpecChoice::Preset(Preset::Alternative),
            Some("custom") => {
                if !matches!(self.spec, SpecChoice::Custom(_)) {
                    return Err(CliError::Config("--spec custom needs a spec object in the config".into()));
                }
            }
            Some(other) => return Err(CliError::Config(format!("unknown spec {other:?}"))),
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for s in std::iter::once(&self.spec).chain(&self.compare) {
            s.resolve().validate().map_err(ModelError::from)?;
        }
        self.sampler.validate()?;
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(CliError::Config("k must be a non-negative number".into()));
        }
        self.k_grid.values()?;
        if self.n_mc < econ::MIN_MC {
            return Err(CliError::Config(format!("n_mc must be at least {}", econ::MIN_MC)));
        }
        if !(self.time_unit > 0.0) {
            return Err(CliError::Config("time_unit must be positive".into()));
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        self.spec.resolve()
    }

    pub fn data_path(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| self.out.join("data.csv"))
    }

    /// Sampler settings for one arm; chains of different arms use distinct
    /// streams.
    pub fn sampler_for(&self, arm: u8) -> SamplerConfig {
        SamplerConfig { seed: derive_seed(self.seed, 10 + arm as u64), ..self.sampler.clone() }
    }
}

/// Mixes a run seed and a stage tag into an independent seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Directory-safe name of a spec.
pub fn spec_dir(spec: &ModelSpec) -> String {
    spec.label().replace('/', "-")
}

fn write_file(path: &Path, contents: &str) -> Result<PathBuf, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))?;
    Ok(path.to_path_buf())
}

fn write_with<F>(path: &Path, f: F) -> Result<PathBuf, CliError>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf).map_err(io_err(path))?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, buf).map_err(io_err(path))?;
    Ok(path.to_path_buf())
}

/// Checks an outcome CSV; returns the parsed dataset.
pub fn validate(path: &Path) -> Result<TrialDataset, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingInput(path.display().to_string()));
    }
    Ok(data::load_trial_csv(path)?)
}

/// Derives `<out>/data.csv` from the configured series and costs.
pub fn derive_qas(c: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let series = c.series.as_ref().ok_or_else(|| CliError::Config("derive-qas needs `series`".into()))?;
    for p in std::iter::once(series).chain(&c.costs) {
        if !p.is_file() {
            return Err(CliError::MissingInput(p.display().to_string()));
        }
    }
    let f = File::open(series).map_err(io_err(series))?;
    let parsed = qas::parse_series_csv(BufReader::new(f))?;
    let costs = match &c.costs {
        Some(p) => qas::parse_cost_csv(BufReader::new(File::open(p).map_err(io_err(p))?))?,
        None => Default::default(),
    };
    let d = qas::derive_dataset(&parsed, &costs, c.time_unit)?;
    let out = c.out.join("data.csv");
    Ok(vec![write_with(&out, |w| d.write_csv(w).map_err(std::io::Error::other))?])
}

/// Generates a trial, amputates it and writes data, the complete data,
/// the truth and the realized missingness.
pub fn simulate(c: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let truth = match &c.simulate.truth {
        Some(p) => Truth::load(p)?,
        None => synth::default_truth(&c.model_spec()),
    };
    let complete = synth::generate(&truth, c.simulate.n_per_arm, derive_seed(c.seed, 1))?;
    let (d, shares) = synth::amputate(&complete, &c.simulate.amputation, derive_seed(c.seed, 2))?;
    let mut written = vec![
        write_with(&c.out.join("data.csv"), |w| d.write_csv(w).map_err(std::io::Error::other))?,
        write_with(&c.out.join("data_complete.csv"), |w| complete.write_csv(w).map_err(std::io::Error::other))?,
    ];
    let truth_path = c.out.join("truth.json");
    written.push(write_file(&truth_path, &(serde_json::to_string_pretty(&truth).expect("truth serializes") + "\n"))?);
    let mut miss = String::from("arm,variable,missing_share\n");
    for (arm, s) in [(1, shares.arm1), (2, shares.arm2)] {
        for v in Variable::ALL {
            writeln!(miss, "{arm},{v},{}", format_value(s[v.index()])).expect("string write");
        }
    }
    written.push(write_file(&c.out.join("missingness.csv"), &miss)?);
    Ok(written)
}

/// Models and draws for one spec, both arms.
pub struct SpecFit {
    pub spec: ModelSpec,
    pub models: [ModelInstance; 2],
    pub draws: [Chains; 2],
}

fn draws_path(c: &RunConfig, spec: &ModelSpec, arm: u8) -> PathBuf {
    c.out.join("fits").join(spec_dir(spec)).join(format!("draws_arm{arm}.csv"))
}

fn load_data(c: &RunConfig) -> Result<TrialDataset, CliError> {
    validate(&c.data_path())
}

fn build_models(spec: &ModelSpec, d: &TrialDataset) -> Result<[ModelInstance; 2], CliError> {
    Ok([build_model(spec, &d.arm(1))?, build_model(spec, &d.arm(2))?])
}

/// Fits both arms under `spec`, writing draw files and index maps. Returns
/// the fit even when sampling was unreliable; the caller decides.
pub fn fit_spec(c: &RunConfig, spec: &ModelSpec, d: &TrialDataset) -> Result<(SpecFit, Vec<PathBuf>), CliError> {
    let models = build_models(spec, d)?;
    let mut written = Vec::new();
    let mut draws = Vec::with_capacity(2);
    for (a, m) in models.iter().enumerate() {
        let arm = a as u8 + 1;
        let chains = sampler::sample(m, &c.sampler_for(arm))?;
        let p = draws_path(c, spec, arm);
        written.push(write_with(&p, |w| chains.write_csv(w))?);
        let map = p.with_file_name(format!("index_map_arm{arm}.csv"));
        written.push(write_with(&map, |w| m.write_index_map(w))?);
        draws.push(chains);
    }
    let draws: [Chains; 2] = draws.try_into().map_err(|_| CliError::Config("two arms expected".into()))?;
    Ok((SpecFit { spec: spec.clone(), models, draws }, written))
}

fn check_reliable(f: &SpecFit) -> Result<(), CliError> {
    for (a, d) in f.draws.iter().enumerate() {
        if !d.is_reliable() {
            return Err(CliError::Unreliable { arm: a as u8 + 1, share: d.divergent_share() });
        }
    }
    Ok(())
}

/// Reads existing draws for `spec`, or fits when any draw file is absent.
pub fn load_or_fit(c: &RunConfig, spec: &ModelSpec, d: &TrialDataset) -> Result<(SpecFit, Vec<PathBuf>), CliError> {
    let paths = [draws_path(c, spec, 1), draws_path(c, spec, 2)];
    if !paths.iter().all(|p| p.exists()) {
        return fit_spec(c, spec, d);
    }
    let models = build_models(spec, d)?;
    let mut draws = Vec::with_capacity(2);
    for (m, p) in models.iter().zip(&paths) {
        let chains = Chains::read_csv(BufReader::new(File::open(p).map_err(io_err(p))?))?;
        if chains.names != m.names() {
            return Err(CliError::Config(format!("{} does not match the model's parameters", p.display())));
        }
        draws.push(chains);
    }
    let draws: [Chains; 2] = draws.try_into().map_err(|_| CliError::Config("two arms expected".into()))?;
    Ok((SpecFit { spec: spec.clone(), models, draws }, Vec::new()))
}

pub fn fit(c: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let d = load_data(c)?;
    let (f, written) = fit_spec(c, &c.model_spec(), &d)?;
    check_reliable(&f)?;
    Ok(written)
}

/// Diagnostics table and trace/density plots of the structural parameters.
pub fn diagnose(c: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let d = load_data(c)?;
    let (f, mut written) = load_or_fit(c, &c.model_spec(), &d)?;
    let dir = c.out.join("diagnostics");
    for (a, (m, chains)) in f.models.iter().zip(&f.draws).enumerate() {
        let arm = a + 1;
        let rows = diagnostics::summarize(chains);
        written.push(write_with(&dir.join(format!("diagnostics_arm{arm}.csv")), |w| {
            diagnostics::write_table(&rows, w)
        })?);
        let names: Vec<&str> = m.names()[..m.n_params()].iter().map(|s| s.as_str()).collect();
        let svg = diagnostics::trace_density_svg(chains, &names)?;
        written.push(write_file(&dir.join(format!("trace_arm{arm}.svg")), &svg)?);
    }
    check_reliable(&f)?;
    Ok(written)
}

/// Information-criteria comparison of the run spec and the `compare` specs,
/// and posterior predictive plots for the run spec.
pub fn assess(c: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let d = load_data(c)?;
    let mut specs = vec![c.model_spec()];
    for s in &c.compare {
        let s = s.resolve();
        if !specs.contains(&s) {
            specs.push(s);
        }
    }
    let dir = c.out.join("assess");
    let mut written = Vec::new();
    let mut fits: Vec<FitAssessment> = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let (f, w) = load_or_fit(c, spec, &d)?;
        written.extend(w);
        fits.push(assess::assess_fit(&spec.label(), &[(&f.models[0], &f.draws[0]), (&f.models[1], &f.draws[1])])?);
        if i == 0 {
            for (a, (m, chains)) in f.models.iter().zip(&f.draws).enumerate() {
                let arm = a as u8 + 1;
                let ppc = assess::ppc_replicate(m, chains, c.ppc_replicates, derive_seed(c.seed, 30 + arm as u64))?;
                for v in Variable::ALL {
                    let p = dir.join(format!("ppc_{v}_arm{arm}.svg"));
                    written.push(write_file(&p, &assess::ppc_svg(&ppc, v))?);
                }
            }
        }
    }
    written.push(write_with(&dir.join("model_comparison.csv"), |w| assess::write_table(&fits, w))?);
    Ok(written)
}

/// Marginal means, increments, ICER, CEP and CEAC for the run spec.
pub fn evaluate(c: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let d = load_data(c)?;
    let (f, mut written) = load_or_fit(c, &c.model_spec(), &d)?;
    let means = |a: usize| econ::marginal_means(&f.models[a], &f.draws[a], c.n_mc, derive_seed(c.seed, 20 + a as u64));
    let e = Evaluation::new(means(0)?, means(1)?)?;
    let grid = c.k_grid.values()?;
    let curve = econ::ceac(&e.increments, &grid)?;
    let dir = c.out.join("evaluate");
    written.push(write_with(&dir.join("summary.csv"), |w| e.write_summary(w))?);
    written.push(write_with(&dir.join("cep.csv"), |w| e.write_cep(w))?);
    written.push(write_with(&dir.join("ceac.csv"), |w| econ::write_ceac(&curve, w))?);
    written.push(write_file(&dir.join("cep.svg"), &econ::cep_svg(&e.increments, c.k))?);
    written.push(write_file(&dir.join("ceac.svg"), &econ::ceac_svg(&curve))?);
    let share = econ::sustainability(&e.increments, c.k);
    written.push(write_file(&dir.join("sustainability.csv"), &format!("k,share\n{},{}\n", format_value(c.k), format_value(share)))?);
    Ok(written)
}

/// Runs fit, diagnose, assess and evaluate into one directory and writes
/// `index.md` listing every output. Simulates first when no data exists.
pub fn report(c: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    if c.data.is_none() && !c.data_path().exists() {
        written.extend(simulate(c)?);
    }
    let d = load_data(c)?;
    let (f, w) = fit_spec(c, &c.model_spec(), &d)?;
    written.extend(w);
    let reliable = check_reliable(&f);
    written.extend(diagnose(c)?);
    written.extend(assess(c)?);
    written.extend(evaluate(c)?);
    let mut index = String::from("# psweave report\n\n");
    writeln!(index, "- spec: {}", c.model_spec().label()).expect("string write");
    writeln!(index, "- seed: {}", c.seed).expect("string write");
    writeln!(
        index,
        "- sampler: {} chains x {} iterations ({} warmup)",
        c.sampler.chains, c.sampler.iterations, c.sampler.warmup
    )
    .expect("string write");
    writeln!(index, "- data: {}", c.data_path().display()).expect("string write");
    if let Err(e) = &reliable {
        writeln!(index, "- warning: {e}").expect("string write");
    }
    index.push_str("\n## Outputs\n\n");
    let mut rel: Vec<String> = written
        .iter()
        .map(|p| p.strip_prefix(&c.out).unwrap_or(p).display().to_string())
        .collect();
    rel.sort();
    rel.dedup();
    for r in rel {
        writeln!(index, "- [{r}]({r})").expect("string write");
    }
    written.push(write_file(&c.out.join("index.md"), &index)?);
    reliable?;
    Ok(written)
}
