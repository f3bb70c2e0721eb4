//! Experiment orchestration: seeded cells, grid sweeps, JSON-lines records,
//! aggregation into summary tables and plot emission.
//!
//! Every repeat draws its own split (and synthetic dataset) from the master
//! seed and the repeat index only, so all cells of one repeat see the same
//! data. Attack initialization is shared by Opt and Nopt for the same
//! `(family, α, repeat)`; defense sampling is seeded per cell.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{self, AttackConfig};
use crate::data::{self, Dataset, SyntheticSpec, TargetColumn};
use crate::defend::{self, ProdaConfig, TrimConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::plot::{Chart, Series, SeriesStyle};
use crate::regress::{self, Family};
use crate::seed;

pub const RECORDS_SCHEMA: &str = "poisonbench.records";
pub const RECORDS_VERSION: u32 = 1;
pub const DEFAULT_ALPHAS: [f64; 5] = [0.04, 0.08, 0.12, 0.16, 0.20];
/// Iteration rate used for modeled timings (1000 iterations per microsecond).
pub const DEFAULT_ITERATIONS_PER_SECOND: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    None,
    Opt,
    Nopt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefenseKind {
    None,
    Trim,
    Proda,
}

macro_rules! kind_str {
    ($t:ty { $($v:ident => $s:literal),* }) => {
        impl $t {
            pub fn as_str(self) -> &'static str {
                match self { $(<$t>::$v => $s),* }
            }
        }
        impl std::str::FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($s => Ok(<$t>::$v),)*
                    other => Err(Error::InvalidParameter(format!("unknown {} `{other}`", stringify!($t)))),
                }
            }
        }
        impl std::fmt::Display for $t {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

kind_str!(AttackKind { None => "none", Opt => "opt", Nopt => "nopt" });
kind_str!(DefenseKind { None => "none", Trim => "trim", Proda => "proda" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        target: String,
        #[serde(default)]
        categorical: Vec<String>,
    },
    Synthetic {
        d: usize,
        n: usize,
        noise: f64,
        /// Fixed dataset seed; `None` draws a fresh dataset for every repeat.
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl DatasetSource {
    pub fn label(&self) -> String {
        match self {
            DatasetSource::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".into()),
            DatasetSource::Synthetic { d, n, noise, .. } => format!("synthetic-d{d}-n{n}-s{noise}"),
        }
    }

    fn load(&self, repeat_seed: u64) -> Result<Dataset> {
        match self {
            DatasetSource::Csv {
                path,
                target,
                categorical,
            } => Ok(data::load_csv(path, &TargetColumn::from(target.as_str()), categorical)?.0),
            DatasetSource::Synthetic { d, n, noise, seed } => {
                let s = seed.unwrap_or_else(|| seed::derive(repeat_seed, "synthetic"));
                Ok(data::generate_synthetic(&SyntheticSpec::random(*d, *n, *noise, s))?.0)
            }
        }
    }

    fn varies_per_repeat(&self) -> bool {
        matches!(self, DatasetSource::Synthetic { seed: None, .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaPolicy {
    /// Chosen per cell by validation MSE over [`regress::LAMBDA_GRID`].
    Validation,
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Dataset label used in records; defaults to the source label.
    pub dataset: Option<String>,
    pub source: DatasetSource,
    pub families: Vec<Family>,
    pub lambda: LambdaPolicy,
    pub attacks: Vec<AttackKind>,
    pub defenses: Vec<DefenseKind>,
    pub alphas: Vec<f64>,
    /// Proda group sizes; empty means `d + 1`.
    pub gammas: Vec<usize>,
    /// Defender's α; `None` uses 0.2.
    pub alpha_assumed: Option<f64>,
    pub epsilon: f64,
    pub repeats: usize,
    pub master_seed: u64,
    pub max_features: Option<usize>,
    /// Attacker sees a bootstrap resample of this fraction of the training fold.
    pub surrogate_fraction: Option<f64>,
    pub train_subsample: Option<usize>,
    pub attack: AttackConfig,
    pub trim_max_iters: usize,
    pub iterations_per_second: f64,
    #[serde(skip)]
    pub execution: Execution,
}

impl ExperimentSpec {
    pub fn new(source: DatasetSource) -> Self {
        ExperimentSpec {
            dataset: None,
            source,
            families: vec![Family::Ols],
            lambda: LambdaPolicy::Validation,
            attacks: vec![AttackKind::Nopt],
            defenses: vec![DefenseKind::None],
            alphas: DEFAULT_ALPHAS.to_vec(),
            gammas: Vec::new(),
            alpha_assumed: None,
            epsilon: defend::DEFAULT_EPSILON,
            repeats: 5,
            master_seed: seed::DEFAULT_SEED,
            max_features: None,
            surrogate_fraction: None,
            train_subsample: None,
            attack: AttackConfig::default(),
            trim_max_iters: TrimConfig::default().max_iters,
            iterations_per_second: DEFAULT_ITERATIONS_PER_SECOND,
            execution: Execution::default(),
        }
    }

    pub fn dataset_label(&self) -> String {
        self.dataset.clone().unwrap_or_else(|| self.source.label())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.families.is_empty() || self.attacks.is_empty() || self.defenses.is_empty() {
            return bad("families, attacks and defenses must be nonempty");
        }
        if self.alphas.is_empty() && self.attacks.iter().any(|a| *a != AttackKind::None) {
            return bad("alpha grid must be nonempty");
        }
        if self.repeats == 0 {
            return bad("repeats must be >= 1");
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a <= 0.2)) {
            return Err(Error::InvalidParameter(format!("alpha {a} outside (0, 0.2]")));
        }
        if let Some(aa) = self.alpha_assumed {
            if !(0.0..1.0).contains(&aa) {
                return bad("alpha_assumed must lie in [0, 1)");
            }
        }
        if let Some(f) = self.surrogate_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return bad("surrogate_fraction must lie in (0, 1]");
            }
        }
        if !(self.iterations_per_second > 0.0) {
            return bad("iterations_per_second must be > 0");
        }
        Ok(())
    }

    fn effective_dim(&self, ds: &Dataset) -> usize {
        self.max_features.map_or(ds.dim(), |k| k.min(ds.dim()))
    }

    /// All grid cells in emission order, each repeated `repeats` times.
    pub fn cells(&self, d: usize) -> Vec<(CellCoords, usize)> {
        let alpha_assumed = self.alpha_assumed.unwrap_or(defend::DEFAULT_ALPHA_ASSUMED);
        let gammas = if self.gammas.is_empty() {
            vec![d + 1]
        } else {
            self.gammas.clone()
        };
        let mut out = Vec::new();
        for &family in &self.families {
            for &attack in &self.attacks {
                let alphas = if attack == AttackKind::None {
                    vec![0.0]
                } else {
                    self.alphas.clone()
                };
                for &alpha in &alphas {
                    for &defense in &self.defenses {
                        let gs: Vec<Option<usize>> = match defense {
                            DefenseKind::Proda => gammas.iter().copied().map(Some).collect(),
                            _ => vec![None],
                        };
                        for gamma in gs {
                            let coords = CellCoords {
                                family,
                                attack,
                                defense,
                                alpha,
                                alpha_assumed: (defense != DefenseKind::None).then_some(alpha_assumed),
                                gamma,
                            };
                            for r in 0..self.repeats {
                                out.push((coords, r));
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellCoords {
    pub family: Family,
    pub attack: AttackKind,
    pub defense: DefenseKind,
    pub alpha: f64,
    pub alpha_assumed: Option<f64>,
    pub gamma: Option<usize>,
}

impl CellCoords {
    fn label(&self) -> String {
        format!(
            "{}|{}|{}|{}|{:?}|{:?}",
            self.family, self.attack, self.defense, self.alpha, self.alpha_assumed, self.gamma
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub dataset: String,
    pub family: String,
    pub rho: Option<f64>,
    pub lambda: Option<f64>,
    pub attack: AttackKind,
    pub defense: DefenseKind,
    pub alpha: f64,
    pub alpha_assumed: Option<f64>,
    pub gamma: Option<usize>,
    pub repeat: usize,
    pub seed: u64,
    pub n_train: Option<usize>,
    pub n_poison: Option<usize>,
    /// Clean-fit model on the clean training fold.
    pub mse_clean: Option<f64>,
    pub mse_clean_test: Option<f64>,
    /// Poisoned model on the set it was trained on (clean fold ∪ poison).
    pub mse_poisoned: Option<f64>,
    /// Poisoned model on the clean training fold.
    pub mse_poisoned_clean: Option<f64>,
    pub mse_poisoned_test: Option<f64>,
    /// Defended model on the clean training fold.
    pub mse_defended: Option<f64>,
    /// Defended model on its selected subset.
    pub mse_defended_subset: Option<f64>,
    pub mse_defended_test: Option<f64>,
    /// Poison rows kept in the defended subset.
    pub poison_retained: Option<usize>,
    pub wall_time_attack_s: Option<f64>,
    pub wall_time_defense_s: Option<f64>,
    /// Iteration counts converted with `iterations_per_second`.
    pub modeled_time_attack_s: Option<f64>,
    pub modeled_time_defense_s: Option<f64>,
    pub attack_iterations: Option<usize>,
    pub attack_refits: Option<usize>,
    pub attack_converged: Option<bool>,
    /// Proda groups (β) or TRIM iterations.
    pub defense_iterations: Option<usize>,
    pub defense_converged: Option<bool>,
    pub trim_worst_case_iterations: Option<f64>,
    pub error: Option<String>,
}

impl ExperimentRecord {
    fn blank(dataset: String, coords: &CellCoords, repeat: usize, seed: u64) -> Self {
        ExperimentRecord {
            dataset,
            family: coords.family.name().to_string(),
            rho: coords.family.rho(),
            lambda: None,
            attack: coords.attack,
            defense: coords.defense,
            alpha: coords.alpha,
            alpha_assumed: coords.alpha_assumed,
            gamma: coords.gamma,
            repeat,
            seed,
            n_train: None,
            n_poison: None,
            mse_clean: None,
            mse_clean_test: None,
            mse_poisoned: None,
            mse_poisoned_clean: None,
            mse_poisoned_test: None,
            mse_defended: None,
            mse_defended_subset: None,
            mse_defended_test: None,
            poison_retained: None,
            wall_time_attack_s: None,
            wall_time_defense_s: None,
            modeled_time_attack_s: None,
            modeled_time_defense_s: None,
            attack_iterations: None,
            attack_refits: None,
            attack_converged: None,
            defense_iterations: None,
            defense_converged: None,
            trim_worst_case_iterations: None,
            error: None,
        }
    }
}

fn repeat_seed(master: u64, repeat: usize) -> u64 {
    seed::derive(master, &format!("repeat:{repeat}"))
}

/// Runs one grid cell for one repeat. Failures are captured in `error`.
pub fn run_cell(spec: &ExperimentSpec, source: &Dataset, coords: &CellCoords, repeat: usize) -> ExperimentRecord {
    let cell_seed = seed::derive(spec.master_seed, &format!("{}|{repeat}", coords.label()));
    let mut rec = ExperimentRecord::blank(spec.dataset_label(), coords, repeat, cell_seed);
    if let Err(e) = fill_cell(spec, source, coords, repeat, cell_seed, &mut rec) {
        rec.error = Some(e.to_string());
    }
    rec
}

fn fill_cell(
    spec: &ExperimentSpec,
    source: &Dataset,
    coords: &CellCoords,
    repeat: usize,
    cell_seed: u64,
    rec: &mut ExperimentRecord,
) -> Result<()> {
    let rseed = repeat_seed(spec.master_seed, repeat);
    let ds = source.truncate_features(spec.effective_dim(source));
    let split = data::split_three(&ds, seed::derive(rseed, "split"))?;
    let mut train = split.train;
    if let Some(k) = spec.train_subsample {
        if k < train.len() {
            train = train.select(&(0..k).collect::<Vec<_>>());
        }
    }
    let family = coords.family;
    let lambda = match spec.lambda {
        LambdaPolicy::Fixed(l) => l,
        LambdaPolicy::Validation => regress::select_lambda(&train, &split.validation, family)?,
    };
    let lambda = if family == Family::Ols { 0.0 } else { lambda };
    rec.lambda = Some(lambda);
    rec.n_train = Some(train.len());

    let clean = regress::fit(&train, family, lambda, &regress::SolverOpts::default())?;
    rec.mse_clean = Some(clean.train_mse);
    rec.mse_clean_test = Some(regress::mse(&split.test, &clean.model)?);

    let mut defended_input = train.clone();
    if coords.attack != AttackKind::None {
        let p = attack::poison_count(coords.alpha, train.len());
        let view = match spec.surrogate_fraction {
            Some(f) => {
                let mut rng = seed::rng(seed::derive(rseed, "surrogate"));
                let m = ((f * train.len() as f64).round() as usize).max(train.dim() + 2);
                let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..train.len())).collect();
                train.select(&idx)
            }
            None => train.clone(),
        };
        let cfg = AttackConfig {
            alpha: coords.alpha,
            poison_count: Some(p),
            seed: seed::derive(rseed, &format!("attack|{family}|{}", coords.alpha)),
            ..spec.attack.clone()
        };
        let start = Instant::now();
        let state = match coords.attack {
            AttackKind::Nopt => attack::nopt_attack(&view, &cfg, family, lambda)?,
            AttackKind::Opt => attack::opt_attack(&view, &cfg, family, lambda)?,
            AttackKind::None => unreachable!(),
        };
        rec.wall_time_attack_s = Some(start.elapsed().as_secs_f64());
        rec.attack_iterations = Some(state.iterations);
        rec.attack_refits = Some(state.refits);
        rec.attack_converged = Some(state.converged);
        rec.modeled_time_attack_s = Some(state.refits as f64 / spec.iterations_per_second);

        let (poisoned, _) = data::merge(&train, &state.poison)?;
        let model = regress::fit_model(&poisoned, family, lambda)?;
        rec.n_poison = Some(state.poison.len());
        rec.mse_poisoned = Some(regress::mse(&poisoned, &model)?);
        rec.mse_poisoned_clean = Some(regress::mse(&train, &model)?);
        rec.mse_poisoned_test = Some(regress::mse(&split.test, &model)?);
        defended_input = poisoned;
    }

    if coords.defense != DefenseKind::None {
        let alpha_assumed = coords.alpha_assumed.unwrap_or(defend::DEFAULT_ALPHA_ASSUMED);
        let n = defend::subset_size(alpha_assumed, defended_input.len());
        let start = Instant::now();
        let result = match coords.defense {
            DefenseKind::Proda => {
                let cfg = ProdaConfig {
                    gamma: coords.gamma.unwrap_or(defended_input.dim() + 1),
                    epsilon: spec.epsilon,
                    alpha_assumed,
                    seed: cell_seed,
                    execution: spec.execution,
                };
                let r = defend::proda_defend(&defended_input, &cfg, family, lambda)?;
                rec.defense_converged = Some(true);
                r
            }
            DefenseKind::Trim => {
                let cfg = TrimConfig {
                    alpha_assumed,
                    max_iters: spec.trim_max_iters,
                    seed: cell_seed,
                };
                let out = defend::trim_defend(&defended_input, &cfg, family, lambda)?;
                rec.defense_converged = Some(out.converged);
                rec.trim_worst_case_iterations =
                    Some(defend::trim_worst_case_iterations(defended_input.len(), n));
                out.result
            }
            DefenseKind::None => unreachable!(),
        };
        rec.wall_time_defense_s = Some(start.elapsed().as_secs_f64());
        rec.defense_iterations = Some(result.beta_used);
        rec.modeled_time_defense_s = Some((result.beta_used * n) as f64 / spec.iterations_per_second);
        rec.mse_defended = Some(regress::mse(&train, &result.model)?);
        rec.mse_defended_subset = Some(result.subset_mse);
        rec.mse_defended_test = Some(regress::mse(&split.test, &result.model)?);
        rec.poison_retained = Some(result.subset_indices.iter().filter(|&&i| i >= train.len()).count());
    }
    Ok(())
}

/// Runs every cell of the grid and hands records to `sink` in grid order.
pub fn run_sweep<F>(spec: &ExperimentSpec, mut sink: F) -> Result<Vec<ExperimentRecord>>
where
    F: FnMut(&ExperimentRecord) -> Result<()>,
{
    spec.validate()?;
    let per_repeat = spec.source.varies_per_repeat();
    let fixed = if per_repeat {
        None
    } else {
        Some(spec.source.load(0)?)
    };
    let datasets: Vec<Dataset> = if per_repeat {
        (0..spec.repeats)
            .map(|r| spec.source.load(repeat_seed(spec.master_seed, r)))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let pick = |r: usize| fixed.as_ref().unwrap_or_else(|| &datasets[r]);
    let d = spec.effective_dim(pick(0));
    let cells = spec.cells(d);

    let mut records = Vec::with_capacity(cells.len());
    if spec.execution.is_parallel() {
        let computed = spec
            .execution
            .map_indexed(cells.len(), |i| run_cell(spec, pick(cells[i].1), &cells[i].0, cells[i].1));
        for rec in computed {
            sink(&rec)?;
            records.push(rec);
        }
    } else {
        for (coords, r) in &cells {
            let rec = run_cell(spec, pick(*r), coords, *r);
            sink(&rec)?;
            records.push(rec);
        }
    }
    Ok(records)
}

#[derive(Serialize, Deserialize)]
struct RecordsHeader {
    schema: String,
    version: u32,
    #[serde(default)]
    spec: Option<serde_json::Value>,
}

/// Append-only JSON-lines writer; the first line is a schema header.
pub struct RecordWriter {
    path: PathBuf,
    out: std::io::BufWriter<std::fs::File>,
}

impl RecordWriter {
    pub fn create(path: impl AsRef<Path>, spec: Option<&ExperimentSpec>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = RecordWriter {
            path,
            out: std::io::BufWriter::new(file),
        };
        let header = RecordsHeader {
            schema: RECORDS_SCHEMA.into(),
            version: RECORDS_VERSION,
            spec: spec.map(serde_json::to_value).transpose()?,
        };
        w.line(&header)?;
        Ok(w)
    }

    fn line<T: Serialize>(&mut self, v: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, v)?;
        writeln!(self.out).map_err(|e| Error::io(&self.path, e))?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn append(&mut self, rec: &ExperimentRecord) -> Result<()> {
        self.line(rec)
    }
}

pub fn write_records(path: impl AsRef<Path>, spec: Option<&ExperimentSpec>, records: &[ExperimentRecord]) -> Result<()> {
    let mut w = RecordWriter::create(path, spec)?;
    records.iter().try_for_each(|r| w.append(r))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ExperimentRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or(Error::Empty("records file"))?
        .map_err(|e| Error::io(path, e))?;
    let header: RecordsHeader = serde_json::from_str(&header)?;
    if header.schema != RECORDS_SCHEMA || header.version != RECORDS_VERSION {
        return Err(Error::InvalidParameter(format!(
            "unsupported records schema {} v{}",
            header.schema, header.version
        )));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Some(Stats {
            mean: v.iter().sum::<f64>() / n as f64,
            median,
            min: v[0],
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct GroupKey {
    dataset: String,
    family: String,
    attack: AttackKind,
    defense: DefenseKind,
    alpha: u64,
    alpha_assumed: Option<u64>,
    gamma: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub family: String,
    pub attack: AttackKind,
    pub defense: DefenseKind,
    pub alpha: f64,
    pub alpha_assumed: Option<f64>,
    pub gamma: Option<usize>,
    pub runs: usize,
    pub failed: usize,
    pub mse_clean: Option<Stats>,
    pub mse_poisoned: Option<Stats>,
    pub mse_defended: Option<Stats>,
    pub time_attack_s: Option<Stats>,
    pub time_defense_s: Option<Stats>,
    pub attack_iterations: Option<Stats>,
    pub defense_iterations: Option<Stats>,
    pub trim_worst_case_iterations: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

pub const SUMMARY_COLUMNS: [&str; 12] = [
    "dataset",
    "family",
    "attack",
    "defense",
    "alpha",
    "alpha_assumed",
    "gamma",
    "mse_clean",
    "mse_poisoned",
    "mse_defended",
    "time_attack_s",
    "time_defense_s",
];

/// Groups records by every coordinate except the seed/repeat, in order of
/// first appearance. Failed records count toward `failed` only.
pub fn aggregate(records: &[ExperimentRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::Empty("no records to aggregate"));
    }
    let mut order: Vec<GroupKey> = Vec::new();
    let mut groups: HashMap<GroupKey, Vec<&ExperimentRecord>> = HashMap::new();
    for r in records {
        let key = GroupKey {
            dataset: r.dataset.clone(),
            family: r.family.clone(),
            attack: r.attack,
            defense: r.defense,
            alpha: r.alpha.to_bits(),
            alpha_assumed: r.alpha_assumed.map(f64::to_bits),
            gamma: r.gamma,
        };
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    let rows = order
        .into_iter()
        .map(|key| {
            let rs = &groups[&key];
            let ok: Vec<&&ExperimentRecord> = rs.iter().filter(|r| r.error.is_none()).collect();
            let stat = |f: &dyn Fn(&ExperimentRecord) -> Option<f64>| {
                Stats::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            let first = rs[0];
            SummaryRow {
                dataset: first.dataset.clone(),
                family: first.family.clone(),
                attack: first.attack,
                defense: first.defense,
                alpha: first.alpha,
                alpha_assumed: first.alpha_assumed,
                gamma: first.gamma,
                runs: rs.len(),
                failed: rs.len() - ok.len(),
                mse_clean: stat(&|r| r.mse_clean),
                mse_poisoned: stat(&|r| r.mse_poisoned),
                mse_defended: stat(&|r| r.mse_defended),
                time_attack_s: stat(&|r| r.modeled_time_attack_s),
                time_defense_s: stat(&|r| r.modeled_time_defense_s),
                attack_iterations: stat(&|r| r.attack_iterations.map(|v| v as f64)),
                defense_iterations: stat(&|r| r.defense_iterations.map(|v| v as f64)),
                trim_worst_case_iterations: ok.iter().find_map(|r| r.trim_worst_case_iterations),
            }
        })
        .collect();
    Ok(Summary { rows })
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Summary {
    /// Fixed-column CSV of per-cell means.
    pub fn to_csv(&self) -> String {
        let mut s = SUMMARY_COLUMNS.join(",");
        s.push('\n');
        for r in &self.rows {
            let mean = |st: Option<Stats>| opt_num(st.map(|x| x.mean));
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.dataset,
                r.family,
                r.attack,
                r.defense,
                r.alpha,
                opt_num(r.alpha_assumed),
                r.gamma.map(|g| g.to_string()).unwrap_or_default(),
                mean(r.mse_clean),
                mean(r.mse_poisoned),
                mean(r.mse_defended),
                mean(r.time_attack_s),
                mean(r.time_defense_s),
            );
        }
        s
    }

    /// CSV with mean/median/min/max of every metric.
    pub fn to_stats_csv(&self) -> String {
        let metrics = ["mse_clean", "mse_poisoned", "mse_defended", "time_attack_s", "time_defense_s"];
        let mut s = String::from("dataset,family,attack,defense,alpha,alpha_assumed,gamma,runs,failed");
        for m in metrics {
            for st in ["mean", "median", "min", "max"] {
                let _ = write!(s, ",{m}_{st}");
            }
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.dataset,
                r.family,
                r.attack,
                r.defense,
                r.alpha,
                opt_num(r.alpha_assumed),
                r.gamma.map(|g| g.to_string()).unwrap_or_default(),
                r.runs,
                r.failed
            );
            for st in [r.mse_clean, r.mse_poisoned, r.mse_defended, r.time_attack_s, r.time_defense_s] {
                let v = |f: fn(&Stats) -> f64| opt_num(st.as_ref().map(f));
                let _ = write!(s, ",{},{},{},{}", v(|x| x.mean), v(|x| x.median), v(|x| x.min), v(|x| x.max));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// One row of a summary CSV as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryCsvRow {
    pub fields: Vec<String>,
}

impl SummaryCsvRow {
    pub fn number(&self, column: &str) -> Option<f64> {
        let i = SUMMARY_COLUMNS.iter().position(|c| *c == column)?;
        self.fields.get(i).and_then(|v| v.parse().ok())
    }
}

pub fn read_summary_csv(path: impl AsRef<Path>) -> Result<Vec<SummaryCsvRow>> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers != SUMMARY_COLUMNS {
        return Err(Error::InvalidParameter(format!("unexpected summary columns {headers:?}")));
    }
    rdr.records()
        .map(|r| {
            Ok(SummaryCsvRow {
                fields: r?.iter().map(str::to_string).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    MseVsAlpha,
    MseVsGamma,
}

/// Builds a chart from summary rows.
///
/// `MseVsAlpha`: one series per `(attack, defense)` combination plus an
/// "unpoison" series from the clean MSE. `MseVsGamma`: defended MSE of every
/// Proda row against γ, one series per `(family, attack)`, plus the clean MSE.
pub fn summary_chart(rows: &[SummaryRow], kind: PlotKind, title: &str) -> Result<Chart> {
    if rows.is_empty() {
        return Err(Error::Empty("summary has no rows"));
    }
    let mean = |s: Option<Stats>| s.map(|x| x.mean);
    let mut series: Vec<Series> = Vec::new();
    let mut push = |name: String, x: f64, y: f64| match series.iter_mut().find(|s| s.name == name) {
        Some(s) => s.points.push((x, y)),
        None => series.push(Series {
            name,
            style: SeriesStyle::Line,
            points: vec![(x, y)],
        }),
    };
    let mut clean: Vec<(f64, f64)> = Vec::new();
    let (x_label, y_label) = match kind {
        PlotKind::MseVsAlpha => {
            for r in rows.iter().filter(|r| r.attack != AttackKind::None) {
                let (name, y) = if r.defense == DefenseKind::None {
                    (r.attack.to_string(), mean(r.mse_poisoned))
                } else {
                    (format!("{}+{}", r.attack, r.defense), mean(r.mse_defended))
                };
                if let Some(y) = y {
                    push(name, r.alpha, y);
                }
                if let Some(c) = mean(r.mse_clean) {
                    if !clean.iter().any(|p| p.0 == r.alpha) {
                        clean.push((r.alpha, c));
                    }
                }
            }
            ("poisoning rate alpha", "MSE")
        }
        PlotKind::MseVsGamma => {
            for r in rows.iter().filter(|r| r.defense == DefenseKind::Proda) {
                let (Some(g), Some(y)) = (r.gamma, mean(r.mse_defended)) else {
                    continue;
                };
                push(format!("{}/{}", r.family, r.attack), g as f64, y);
                if let Some(c) = mean(r.mse_clean) {
                    if !clean.iter().any(|p| p.0 == g as f64) {
                        clean.push((g as f64, c));
                    }
                }
            }
            ("group size gamma", "defended MSE")
        }
    };
    if !clean.is_empty() {
        series.insert(
            0,
            Series {
                name: "unpoison".into(),
                style: SeriesStyle::Line,
                points: clean,
            },
        );
    }
    for s in &mut series {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    if series.is_empty() {
        return Err(Error::Empty("no plottable values in summary"));
    }
    Ok(Chart {
        title: title.to_string(),
        x_label: x_label.into(),
        y_label: y_label.into(),
        series,
    })
}

/// Writes `<stem>.svg` and its companion `<stem>.csv`.
pub fn emit_plot(rows: &[SummaryRow], kind: PlotKind, stem: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let stem = stem.as_ref();
    let title = stem
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    summary_chart(rows, kind, &title)?.write(stem)
}

/// Emits one α chart per `(dataset, family)` and one γ chart per
/// `(dataset, family)` when Proda was run with several γ values.
pub fn emit_report_plots(summary: &Summary, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in &summary.rows {
        let k = (r.dataset.clone(), r.family.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut written = Vec::new();
    for (dataset, family) in keys {
        let rows: Vec<SummaryRow> = summary
            .rows
            .iter()
            .filter(|r| r.dataset == dataset && r.family == family)
            .cloned()
            .collect();
        let distinct_alphas = {
            let mut a: Vec<u64> = rows.iter().filter(|r| r.attack != AttackKind::None).map(|r| r.alpha.to_bits()).collect();
            a.sort_unstable();
            a.dedup();
            a.len()
        };
        if distinct_alphas >= 1 {
            if let Ok((svg, csv)) = emit_plot(&rows, PlotKind::MseVsAlpha, dir.join(format!("{dataset}_{family}_mse_vs_alpha"))) {
                written.extend([svg, csv]);
            }
        }
        let gammas = {
            let mut g: Vec<usize> = rows.iter().filter_map(|r| r.gamma).collect();
            g.sort_unstable();
            g.dedup();
            g.len()
        };
        if gammas >= 2 {
            if let Ok((svg, csv)) = emit_plot(&rows, PlotKind::MseVsGamma, dir.join(format!("{dataset}_{family}_mse_vs_gamma"))) {
                written.extend([svg, csv]);
            }
        }
    }
    Ok(written)
}

/// Plain-text run report: record counts, failures, attack/defense iteration
/// statistics and the TRIM worst-case bound for every TRIM configuration seen.
pub fn report_text(records: &[ExperimentRecord], summary: &Summary) -> String {
    let mut s = String::new();
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    let _ = writeln!(s, "records: {} ({} failed), cells: {}", records.len(), failed, summary.rows.len());
    for r in records.iter().filter(|r| r.error.is_some()).take(10) {
        let _ = writeln!(
            s,
            "  failed {}/{}/{} alpha={} repeat={}: {}",
            r.family,
            r.attack,
            r.defense,
            r.alpha,
            r.repeat,
            r.error.as_deref().unwrap_or("")
        );
    }
    let proda: Vec<&ExperimentRecord> = records
        .iter()
        .filter(|r| r.defense == DefenseKind::Proda && r.error.is_none())
        .collect();
    if let Some(first) = proda.first() {
        let _ = writeln!(
            s,
            "proda: {} runs, group trials per run = beta (e.g. {} for gamma={:?})",
            proda.len(),
            first.defense_iterations.unwrap_or(0),
            first.gamma
        );
    }
    let mut seen: Vec<(usize, usize)> = Vec::new();
    for r in records.iter().filter(|r| r.defense == DefenseKind::Trim && r.error.is_none()) {
        let total = r.n_train.unwrap_or(0) + r.n_poison.unwrap_or(0);
        let n = defend::subset_size(r.alpha_assumed.unwrap_or(defend::DEFAULT_ALPHA_ASSUMED), total);
        if !seen.contains(&(total, n)) {
            seen.push((total, n));
        }
    }
    for (total, n) in seen {
        let its: Vec<usize> = records
            .iter()
            .filter(|r| {
                r.defense == DefenseKind::Trim
                    && r.error.is_none()
                    && r.n_train.unwrap_or(0) + r.n_poison.unwrap_or(0) == total
            })
            .filter_map(|r| r.defense_iterations)
            .collect();
        let _ = writeln!(
            s,
            "trim: N={total}, n={n}: observed iterations max {} over {} runs; worst case C(N, n) = {:.6e} iterations, since TRIM may revisit every size-n subset before it stops changing",
            its.iter().max().copied().unwrap_or(0),
            its.len(),
            defend::trim_worst_case_iterations(total, n)
        );
    }
    s
}
