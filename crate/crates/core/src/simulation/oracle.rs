use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::SettingConfig;
use super::generate::{draw_covariate, draw_potential};
use crate::error::{Error, Result};
use crate::estimators::{Parameter, Subset, Treatment};
use crate::rng::{stream, tag};
use crate::trial_data::{Arm, StratumLabel};

/// Subjects simulated per random stream.
pub const ORACLE_CHUNK: usize = 1 << 16;

const STRATA: [StratumLabel; 3] = [StratumLabel::SStarPlus, StratumLabel::SPlusStar, StratumLabel::SPlusPlus];
const TREATMENTS: [Treatment; 3] = [Treatment::Control, Treatment::Experimental, Treatment::Difference];

#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    #[inline]
    fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64) * (o.n as f64) / n as f64;
        self.n = n;
    }
}

type ChunkStats = [[Moments; 3]; 3];

fn simulate_chunk(cfg: &SettingConfig, seed: u64, chunk: usize, size: usize) -> ChunkStats {
    let mut rng = stream(seed, &[tag::ORACLE, chunk as u64]);
    let k = cfg.n_intermediate();
    let mut z = vec![0.0; k];
    let mut flags = vec![false; k];
    let mut stats = ChunkStats::default();
    for _ in 0..size {
        let x = draw_covariate(cfg, &mut rng);
        let (a0, y0) = draw_potential(cfg, x, Arm::Control, &mut rng, &mut z, &mut flags);
        let (a1, y1) = draw_potential(cfg, x, Arm::Experimental, &mut rng, &mut z, &mut flags);
        let member = [a1, a0, a0 && a1];
        for (s, inside) in member.into_iter().enumerate() {
            if inside {
                stats[s][0].push(y0);
                stats[s][1].push(y1);
                stats[s][2].push(y1 - y0);
            }
        }
    }
    stats
}

/// Monte Carlo value of one stratum mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub stratum: StratumLabel,
    pub treatment: Treatment,
    pub value: f64,
    /// Standard deviation over the stratum divided by the square root of its size.
    pub mc_se: f64,
    pub count: u64,
}

/// Stratum means of the potential outcomes computed by brute-force simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleTruth {
    pub n_oracle: usize,
    pub seed: u64,
    pub entries: Vec<OracleEntry>,
}

impl OracleTruth {
    pub fn get(&self, stratum: StratumLabel, treatment: Treatment) -> &OracleEntry {
        self.entries
            .iter()
            .find(|e| e.stratum == stratum && e.treatment == treatment)
            .expect("every stratum and treatment is present")
    }

    pub fn value(&self, stratum: StratumLabel, treatment: Treatment) -> f64 {
        self.get(stratum, treatment).value
    }

    /// Truth of a whole-population parameter.
    pub fn parameter(&self, p: Parameter) -> Result<f64> {
        if p.subset != Subset::All {
            return Err(Error::InvalidArgument(format!(
                "the oracle only covers the whole population, not {p}"
            )));
        }
        Ok(self.value(p.stratum, p.treatment))
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io {
            path: "<oracle output>".into(),
            source: e.into(),
        };
        w.write_record(["parameter", "stratum", "treatment", "true", "mc_se", "count", "n_oracle"])
            .map_err(io)?;
        for e in &self.entries {
            let p = Parameter::new(e.stratum, e.treatment, Subset::All);
            w.write_record([
                p.name(),
                e.stratum.to_string(),
                e.treatment.to_string(),
                e.value.to_string(),
                e.mc_se.to_string(),
                e.count.to_string(),
                self.n_oracle.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<oracle output>".into(),
            source,
        })
    }
}

/// Simulates `n_oracle` subjects under both treatments without masking and
/// averages the potential outcomes within each principal stratum.
///
/// Subjects are split into chunks of [`ORACLE_CHUNK`] with one stream each,
/// so the result does not depend on the thread count.
pub fn oracle_truth(cfg: &SettingConfig, n_oracle: usize, seed: u64) -> Result<OracleTruth> {
    cfg.validate()?;
    if n_oracle == 0 {
        return Err(Error::InvalidArgument("the oracle needs at least one subject".into()));
    }
    let chunks = n_oracle.div_ceil(ORACLE_CHUNK);
    let parts: Vec<ChunkStats> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let size = ORACLE_CHUNK.min(n_oracle - c * ORACLE_CHUNK);
            simulate_chunk(cfg, seed, c, size)
        })
        .collect();
    let mut total = ChunkStats::default();
    for part in &parts {
        for s in 0..3 {
            for q in 0..3 {
                total[s][q].merge(&part[s][q]);
            }
        }
    }
    let mut entries = Vec::with_capacity(9);
    for (s, stratum) in STRATA.into_iter().enumerate() {
        for (q, treatment) in TREATMENTS.into_iter().enumerate() {
            let m = total[s][q];
            if m.n < 2 {
                return Err(Error::EmptyStratum {
                    m: 0,
                    stratum,
                    subset: Subset::All.to_string(),
                });
            }
            let sd = (m.m2 / (m.n - 1) as f64).sqrt();
            entries.push(OracleEntry {
                stratum,
                treatment,
                value: m.mean,
                mc_se: sd / (m.n as f64).sqrt(),
                count: m.n,
            });
        }
    }
    Ok(OracleTruth {
        n_oracle,
        seed,
        entries,
    })
}
