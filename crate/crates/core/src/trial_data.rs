//! Observed trial data, structural validation, CSV IO and the potential
//! outcome table shared by the imputation and simulation modules.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Randomized (or hypothetical) treatment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Experimental,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Experimental];

    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Experimental => 1,
        }
    }

    pub fn from_index(i: usize) -> Arm {
        if i == 0 {
            Arm::Control
        } else {
            Arm::Experimental
        }
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::Control => Arm::Experimental,
            Arm::Experimental => Arm::Control,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Principal strata defined by potential adherence `(A(0), A(1))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StratumLabel {
    /// Would adhere to the experimental treatment: `A(1) = 1`.
    SStarPlus,
    /// Would adhere to the control treatment: `A(0) = 1`.
    SPlusStar,
    /// Would adhere to both treatments.
    SPlusPlus,
}

impl StratumLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            StratumLabel::SStarPlus => "s*+",
            StratumLabel::SPlusStar => "s+*",
            StratumLabel::SPlusPlus => "s++",
        }
    }

    /// The stratum obtained by relabeling the arms.
    pub fn swapped(self) -> StratumLabel {
        match self {
            StratumLabel::SStarPlus => StratumLabel::SPlusStar,
            StratumLabel::SPlusStar => StratumLabel::SStarPlus,
            StratumLabel::SPlusPlus => StratumLabel::SPlusPlus,
        }
    }
}

impl fmt::Display for StratumLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StratumLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s*+" | "star-plus" | "starplus" => Ok(StratumLabel::SStarPlus),
            "s+*" | "plus-star" | "plusstar" => Ok(StratumLabel::SPlusStar),
            "s++" | "plus-plus" | "plusplus" => Ok(StratumLabel::SPlusPlus),
            _ => Err(Error::InvalidArgument(format!("unknown stratum `{s}`"))),
        }
    }
}

/// One randomized subject. `None` marks a missing value.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub arm: Arm,
    /// Baseline covariates, always observed.
    pub x: Vec<f64>,
    /// Intermediate measurements `Z(1..K-1)`.
    pub z: Vec<Option<f64>>,
    /// Adherence after each intermediate visit, `I(1..K-1)`.
    pub adherence: Vec<Option<bool>>,
    pub y: Option<f64>,
}

/// Validated container of subject records sharing one visit schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialDataset {
    records: Vec<SubjectRecord>,
    n_covariates: usize,
    n_intermediate: usize,
    arm_sizes: [usize; 2],
}

impl TrialDataset {
    /// Builds a dataset after checking shapes and id uniqueness. Missingness
    /// rules are checked separately by [`validate`].
    pub fn new(
        records: Vec<SubjectRecord>,
        n_covariates: usize,
        n_intermediate: usize,
    ) -> Result<Self> {
        if n_intermediate == 0 {
            return Err(Error::InvalidDataset(
                "at least one intermediate visit is required".into(),
            ));
        }
        let mut ids = HashSet::with_capacity(records.len());
        let mut arm_sizes = [0usize; 2];
        for r in &records {
            if r.x.len() != n_covariates
                || r.z.len() != n_intermediate
                || r.adherence.len() != n_intermediate
            {
                return Err(Error::InvalidDataset(format!(
                    "subject {} does not match the dataset shape (p={}, K-1={})",
                    r.subject_id, n_covariates, n_intermediate
                )));
            }
            if !ids.insert(r.subject_id.as_str()) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate subject id {}",
                    r.subject_id
                )));
            }
            arm_sizes[r.arm.index()] += 1;
        }
        Ok(Self {
            records,
            n_covariates,
            n_intermediate,
            arm_sizes,
        })
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of baseline covariates `p`.
    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    /// Number of intermediate visits, `K - 1`.
    pub fn n_intermediate(&self) -> usize {
        self.n_intermediate
    }

    /// Number of assessment periods `K`.
    pub fn k(&self) -> usize {
        self.n_intermediate + 1
    }

    pub fn arm_size(&self, arm: Arm) -> usize {
        self.arm_sizes[arm.index()]
    }

    pub fn n0(&self) -> usize {
        self.arm_sizes[0]
    }

    pub fn n1(&self) -> usize {
        self.arm_sizes[1]
    }

    pub fn arms(&self) -> Vec<Arm> {
        self.records.iter().map(|r| r.arm).collect()
    }

    /// Copy with arm labels exchanged.
    pub fn swap_arms(&self) -> TrialDataset {
        let records = self
            .records
            .iter()
            .map(|r| SubjectRecord {
                arm: r.arm.other(),
                ..r.clone()
            })
            .collect();
        TrialDataset {
            records,
            n_covariates: self.n_covariates,
            n_intermediate: self.n_intermediate,
            arm_sizes: [self.arm_sizes[1], self.arm_sizes[0]],
        }
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_csv(file)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(file).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(message),
            },
            other => other,
        })
    }

    /// Parses the CSV schema
    /// `subject_id,arm,x1..xp,z1..z{K-1},i1..i{K-1},y` (empty cell = missing).
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
        let (p, periods) = parse_header(&header)?;
        let width = 2 + p + 2 * periods + 1;

        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| csv_error(e, 0))?;
            let line = row.position().map_or(0, |pos| pos.line());
            if row.len() != width {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {width} fields, found {}", row.len()),
                });
            }
            let bad = |column: &str, message: String| Error::Parse {
                line,
                message: format!("column {column}: {message}"),
            };
            let subject_id = row[0].to_string();
            if subject_id.is_empty() {
                return Err(bad("subject_id", "empty subject id".into()));
            }
            let arm = match &row[1] {
                "0" => Arm::Control,
                "1" => Arm::Experimental,
                other => return Err(bad("arm", format!("`{other}` is not 0 or 1"))),
            };
            let mut x = Vec::with_capacity(p);
            for c in 0..p {
                let name = &header[2 + c];
                let cell = &row[2 + c];
                if cell.is_empty() {
                    return Err(bad(name, "baseline covariates must be observed".into()));
                }
                x.push(parse_number(cell).map_err(|m| bad(name, m))?);
            }
            let mut z = Vec::with_capacity(periods);
            for c in 0..periods {
                let col = 2 + p + c;
                z.push(parse_optional(&row[col]).map_err(|m| bad(&header[col], m))?);
            }
            let mut adherence = Vec::with_capacity(periods);
            for c in 0..periods {
                let col = 2 + p + periods + c;
                let flag = match &row[col] {
                    "" => None,
                    "0" => Some(false),
                    "1" => Some(true),
                    other => return Err(bad(&header[col], format!("`{other}` is not 0, 1 or empty"))),
                };
                adherence.push(flag);
            }
            let y = parse_optional(&row[width - 1]).map_err(|m| bad("y", m))?;
            records.push(SubjectRecord {
                subject_id,
                arm,
                x,
                z,
                adherence,
                y,
            });
        }
        TrialDataset::new(records, p, periods)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Parse {
            line: 0,
            message: e.to_string(),
        };
        w.write_record(header_names(self.n_covariates, self.n_intermediate))
            .map_err(io)?;
        let mut row: Vec<String> = Vec::new();
        for r in &self.records {
            row.clear();
            row.push(r.subject_id.clone());
            row.push(r.arm.to_string());
            row.extend(r.x.iter().map(|v| v.to_string()));
            row.extend(r.z.iter().map(|v| v.map(|v| v.to_string()).unwrap_or_default()));
            row.extend(r.adherence.iter().map(|v| match v {
                Some(true) => "1".to_string(),
                Some(false) => "0".to_string(),
                None => String::new(),
            }));
            row.push(r.y.map(|v| v.to_string()).unwrap_or_default());
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        Ok(())
    }
}

pub(crate) fn header_names(p: usize, periods: usize) -> Vec<String> {
    let mut names = vec!["subject_id".to_string(), "arm".to_string()];
    names.extend((1..=p).map(|c| format!("x{c}")));
    names.extend((1..=periods).map(|c| format!("z{c}")));
    names.extend((1..=periods).map(|c| format!("i{c}")));
    names.push("y".to_string());
    names
}

fn parse_header(header: &csv::StringRecord) -> Result<(usize, usize)> {
    let fields: Vec<&str> = header.iter().collect();
    let count = |prefix: char| {
        fields
            .iter()
            .filter(|f| {
                f.len() > 1 && f.starts_with(prefix) && f[1..].chars().all(|c| c.is_ascii_digit())
            })
            .count()
    };
    let p = count('x');
    let periods = count('z');
    let expected = header_names(p, periods);
    if fields != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must be `{}`", expected.join(",")),
        });
    }
    Ok((p, periods))
}

fn parse_number(cell: &str) -> std::result::Result<f64, String> {
    cell.parse::<f64>()
        .map_err(|_| format!("`{cell}` is not a number"))
}

fn parse_optional(cell: &str) -> std::result::Result<Option<f64>, String> {
    if cell.is_empty() {
        Ok(None)
    } else {
        parse_number(cell).map(Some)
    }
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// A broken structural rule for one subject.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub subject_id: String,
    pub rule: Rule,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rule {
    NonFiniteCovariate { column: usize },
    /// `I(k) = 1` after an earlier 0.
    NonMonotoneAdherence { period: usize },
    /// `I(k)` missing although every earlier indicator is 1.
    MissingAdherence { period: usize },
    /// `Z(k)` missing although the subject was still adherent.
    MissingIntermediate { period: usize },
    /// `Z(k)` observed after dropout.
    IntermediateAfterDropout { period: usize },
    MissingOutcome,
    OutcomeAfterDropout,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "subject {}: ", self.subject_id)?;
        match &self.rule {
            Rule::NonFiniteCovariate { column } => write!(f, "x{column} is not finite"),
            Rule::NonMonotoneAdherence { period } => {
                write!(f, "non-monotone adherence: i{period} = 1 after an earlier 0")
            }
            Rule::MissingAdherence { period } => {
                write!(f, "i{period} missing while the subject is adherent")
            }
            Rule::MissingIntermediate { period } => {
                write!(f, "z{period} missing while the subject is adherent")
            }
            Rule::IntermediateAfterDropout { period } => {
                write!(f, "data present after dropout: z{period} observed")
            }
            Rule::MissingOutcome => write!(f, "y missing for an adherent subject"),
            Rule::OutcomeAfterDropout => write!(f, "data present after dropout: y observed"),
        }
    }
}

/// Checks every record against the monotone missingness rules.
///
/// `Z(1)` is always observed, `Z(k+1)` is observed exactly when the subject
/// is still adherent after visit `k`, and `Y` exactly when `A = 1`. After a 0
/// indicator the later indicators may be 0 or empty but never 1.
pub fn validate(dataset: &TrialDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    for r in dataset.records() {
        let mut push = |rule| {
            out.push(Violation {
                subject_id: r.subject_id.clone(),
                rule,
            })
        };
        for (c, v) in r.x.iter().enumerate() {
            if !v.is_finite() {
                push(Rule::NonFiniteCovariate { column: c + 1 });
            }
        }
        let mut at_risk = true;
        let mut non_monotone_reported = false;
        for k in 0..r.z.len() {
            match (at_risk, r.z[k].is_some()) {
                (true, false) => push(Rule::MissingIntermediate { period: k + 1 }),
                (false, true) => push(Rule::IntermediateAfterDropout { period: k + 1 }),
                _ => {}
            }
            match (at_risk, r.adherence[k]) {
                (true, None) => {
                    push(Rule::MissingAdherence { period: k + 1 });
                    at_risk = false;
                }
                (true, Some(flag)) => at_risk = flag,
                (false, Some(true)) if !non_monotone_reported => {
                    push(Rule::NonMonotoneAdherence { period: k + 1 });
                    non_monotone_reported = true;
                }
                _ => {}
            }
        }
        match (at_risk, r.y.is_some()) {
            (true, false) => push(Rule::MissingOutcome),
            (false, true) => push(Rule::OutcomeAfterDropout),
            _ => {}
        }
    }
    out
}

/// Overall adherence `A = prod_k I(k)`.
///
/// Indicators after an explicit 0 may be missing; a missing indicator while
/// every earlier one is 1 is an error.
pub fn adherence(record: &SubjectRecord) -> Result<bool> {
    let mut adherent = true;
    for (k, flag) in record.adherence.iter().enumerate() {
        match flag {
            Some(f) => adherent &= *f,
            None if adherent => {
                return Err(Error::MissingAdherence {
                    subject_id: record.subject_id.clone(),
                    period: k + 1,
                })
            }
            None => {}
        }
    }
    Ok(adherent)
}

/// Whether a potential-outcome cell was observed, imputed, or (in simulated
/// truth tables) generated but hidden from the observed dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellSource {
    Observed,
    Imputed,
    Latent,
}

impl CellSource {
    pub fn code(self) -> char {
        match self {
            CellSource::Observed => 'o',
            CellSource::Imputed => 'i',
            CellSource::Latent => 'l',
        }
    }
}

/// Potential outcomes under both treatments for every subject, stored flat.
///
/// Cell `(j, t)` holds `Z(t)`, `I(t)`, `A(t)` and `Y(t)` of subject `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialOutcomeTable {
    arms: Vec<Arm>,
    n_intermediate: usize,
    pub(crate) z: Vec<f64>,
    pub(crate) z_source: Vec<CellSource>,
    pub(crate) flags: Vec<bool>,
    pub(crate) flag_source: Vec<CellSource>,
    pub(crate) adherent: Vec<bool>,
    pub(crate) y: Vec<f64>,
    pub(crate) y_source: Vec<CellSource>,
}

impl PotentialOutcomeTable {
    pub(crate) fn with_arms(arms: Vec<Arm>, n_intermediate: usize) -> Self {
        let n = arms.len();
        let cells = 2 * n * n_intermediate;
        Self {
            arms,
            n_intermediate,
            z: vec![0.0; cells],
            z_source: vec![CellSource::Imputed; cells],
            flags: vec![false; cells],
            flag_source: vec![CellSource::Imputed; cells],
            adherent: vec![false; 2 * n],
            y: vec![0.0; 2 * n],
            y_source: vec![CellSource::Imputed; 2 * n],
        }
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn n_intermediate(&self) -> usize {
        self.n_intermediate
    }

    pub fn arms(&self) -> &[Arm] {
        &self.arms
    }

    #[inline]
    pub fn arm(&self, j: usize) -> Arm {
        self.arms[j]
    }

    #[inline]
    pub(crate) fn cell(j: usize, t: Arm) -> usize {
        2 * j + t.index()
    }

    #[inline]
    pub fn adherent(&self, j: usize, t: Arm) -> bool {
        self.adherent[Self::cell(j, t)]
    }

    #[inline]
    pub fn y(&self, j: usize, t: Arm) -> f64 {
        self.y[Self::cell(j, t)]
    }

    pub fn y_source(&self, j: usize, t: Arm) -> CellSource {
        self.y_source[Self::cell(j, t)]
    }

    pub fn frame(&self, j: usize) -> PotentialOutcomeFrame<'_> {
        PotentialOutcomeFrame { table: self, j }
    }

    /// Overwrites `Y(t)` of subject `j`.
    pub fn set_y(&mut self, j: usize, t: Arm, value: f64) {
        self.y[Self::cell(j, t)] = value;
    }

    /// Relabels the arms: the randomized arm and the potential outcome index
    /// are both exchanged.
    pub fn swap_arms(&self) -> PotentialOutcomeTable {
        let n = self.len();
        let k = self.n_intermediate;
        let mut out = Self::with_arms(self.arms.iter().map(|a| a.other()).collect(), k);
        for j in 0..n {
            for t in Arm::BOTH {
                let src = Self::cell(j, t);
                let dst = Self::cell(j, t.other());
                out.adherent[dst] = self.adherent[src];
                out.y[dst] = self.y[src];
                out.y_source[dst] = self.y_source[src];
                out.z[dst * k..(dst + 1) * k].copy_from_slice(&self.z[src * k..(src + 1) * k]);
                out.z_source[dst * k..(dst + 1) * k]
                    .copy_from_slice(&self.z_source[src * k..(src + 1) * k]);
                out.flags[dst * k..(dst + 1) * k]
                    .copy_from_slice(&self.flags[src * k..(src + 1) * k]);
                out.flag_source[dst * k..(dst + 1) * k]
                    .copy_from_slice(&self.flag_source[src * k..(src + 1) * k]);
            }
        }
        out
    }
}

/// Borrowed view of one subject's potential outcomes.
#[derive(Clone, Copy)]
pub struct PotentialOutcomeFrame<'a> {
    table: &'a PotentialOutcomeTable,
    j: usize,
}

impl<'a> PotentialOutcomeFrame<'a> {
    fn range(&self, t: Arm) -> std::ops::Range<usize> {
        let k = self.table.n_intermediate;
        let c = PotentialOutcomeTable::cell(self.j, t);
        c * k..(c + 1) * k
    }

    pub fn arm(&self) -> Arm {
        self.table.arms[self.j]
    }

    pub fn z(&self, t: Arm) -> &'a [f64] {
        &self.table.z[self.range(t)]
    }

    pub fn z_source(&self, t: Arm) -> &'a [CellSource] {
        &self.table.z_source[self.range(t)]
    }

    pub fn flags(&self, t: Arm) -> &'a [bool] {
        &self.table.flags[self.range(t)]
    }

    pub fn flag_source(&self, t: Arm) -> &'a [CellSource] {
        &self.table.flag_source[self.range(t)]
    }

    pub fn adherent(&self, t: Arm) -> bool {
        self.table.adherent(self.j, t)
    }

    pub fn y(&self, t: Arm) -> f64 {
        self.table.y(self.j, t)
    }

    pub fn y_source(&self, t: Arm) -> CellSource {
        self.table.y_source(self.j, t)
    }
}
