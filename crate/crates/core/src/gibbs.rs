//! Raster-scan single-site Gibbs sampling of a lattice model.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{RccError, Result};
use crate::model::{Configuration, LatticeModel, Symbol};
use crate::numeric::{sample_index, softmax};
use crate::par::Execution;
use crate::rng::{rng_from_seed, RNG_ALGORITHM};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerConfig {
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub sample_count: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            burn_in: 1000,
            thinning: 10,
            seed: 0,
            sample_count: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in == 0 || self.thinning == 0 || self.sample_count == 0 {
            return Err(RccError::InvalidConfiguration(
                "burn-in, thinning and sample count must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Incremental single-site sampler state.
pub struct GibbsChain<'m, R> {
    model: &'m LatticeModel,
    state: Configuration,
    rng: R,
    logits: Vec<f64>,
}

impl<'m, R: Rng> GibbsChain<'m, R> {
    /// Start from an i.i.d. uniform configuration drawn from `rng`.
    pub fn new(model: &'m LatticeModel, mut rng: R) -> Self {
        let shape = model.shape();
        let q = model.q();
        let pixels = (0..shape.sites()).map(|_| rng.random_range(0..q) as Symbol).collect();
        let state = Configuration::new(shape, pixels).expect("shape matches");
        Self {
            model,
            state,
            rng,
            logits: vec![0.0; q],
        }
    }

    pub fn state(&self) -> &Configuration {
        &self.state
    }

    /// One raster-order pass over every site.
    pub fn sweep(&mut self) {
        let shape = self.model.shape();
        let family = self.model.family();
        let theta = self.model.params();
        let q = family.q();
        for r in 0..shape.rows {
            for c in 0..shape.cols {
                for a in 0..q {
                    let s = a as Symbol;
                    let mut l = theta.node(r, c) * family.node(s);
                    if c > 0 {
                        l += theta.horiz(r, c - 1) * family.horiz(self.state.get(r, c - 1), s);
                    }
                    if c + 1 < shape.cols {
                        l += theta.horiz(r, c) * family.horiz(s, self.state.get(r, c + 1));
                    }
                    if r > 0 {
                        l += theta.vert(r - 1, c) * family.vert(self.state.get(r - 1, c), s);
                    }
                    if r + 1 < shape.rows {
                        l += theta.vert(r, c) * family.vert(s, self.state.get(r + 1, c));
                    }
                    self.logits[a] = l;
                }
                let probs = softmax(&self.logits);
                let u = self.rng.random::<f64>();
                self.state.set(r, c, sample_index(&probs, u) as Symbol);
            }
        }
    }
}

/// `sample_count` configurations, `thinning` sweeps apart after `burn_in`
/// sweeps. Deterministic in `cfg.seed`.
pub fn gibbs_sample(model: &LatticeModel, cfg: &SamplerConfig) -> Result<Vec<Configuration>> {
    cfg.validate()?;
    let mut chain = GibbsChain::new(model, rng_from_seed(cfg.seed));
    for _ in 0..cfg.burn_in {
        chain.sweep();
    }
    let mut out = Vec::with_capacity(cfg.sample_count);
    for _ in 0..cfg.sample_count {
        for _ in 0..cfg.thinning {
            chain.sweep();
        }
        out.push(chain.state().clone());
    }
    Ok(out)
}

/// Independent chains, one per seed, run under `execution`.
pub fn gibbs_replicates(
    model: &LatticeModel,
    cfg: &SamplerConfig,
    seeds: &[u64],
    execution: Execution,
) -> Result<Vec<Vec<Configuration>>> {
    execution
        .map(seeds, |&seed| gibbs_sample(model, &SamplerConfig { seed, ..*cfg }))
        .into_iter()
        .collect()
}

/// SHA-256 over the family tables and per-component parameters, as
/// big-endian binary64 in normative order.
pub fn model_hash(model: &LatticeModel) -> String {
    let mut h = Sha256::new();
    let f = model.family();
    let shape = model.shape();
    h.update((f.q() as u64).to_be_bytes());
    h.update((shape.rows as u64).to_be_bytes());
    h.update((shape.cols as u64).to_be_bytes());
    for v in f
        .node_table()
        .iter()
        .chain(f.horiz_table())
        .chain(f.vert_table())
        .chain(model.params().values())
    {
        h.update(v.to_be_bytes());
    }
    h.finalize().iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

pub fn manifest(model: &LatticeModel, cfg: &SamplerConfig) -> String {
    format!(
        "seed={}\nburn_in={}\nthinning={}\nsample_count={}\nrng={}\nmodel_hash={}\n",
        cfg.seed,
        cfg.burn_in,
        cfg.thinning,
        cfg.sample_count,
        RNG_ALGORITHM,
        model_hash(model)
    )
}

/// Writes `sample_NNNNN.rccimg` files and `manifest.txt` into `dir`.
pub fn write_sample_set(dir: &Path, model: &LatticeModel, cfg: &SamplerConfig, samples: &[Configuration]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, s) in samples.iter().enumerate() {
        crate::io::write_raster_file(&dir.join(format!("sample_{i:05}.rccimg")), s, model.q())?;
    }
    std::fs::write(dir.join("manifest.txt"), manifest(model, cfg))?;
    Ok(())
}
