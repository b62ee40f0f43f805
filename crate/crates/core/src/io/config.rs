use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalParams;
use crate::netmath::loss::LossWeights;
use crate::occlusion_map::MapParams;
use crate::region_select::SelectParams;
use crate::tpp::{NmsParams, OracleDetectorParams, SynthParams, TppParams};

use super::dataset::VisdroneParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TppSection {
    pub n_sub: usize,
    pub coarse_size: (u32, u32),
    pub fine_size: (u32, u32),
    /// Visibility cutoff for annotations of augmentation crops.
    pub augment_min_visible: f64,
}

impl Default for TppSection {
    fn default() -> Self {
        let d = TppParams::default();
        TppSection {
            n_sub: d.n_sub,
            coarse_size: d.coarse_size,
            fine_size: d.fine_size,
            augment_min_visible: 0.25,
        }
    }
}

/// Every tunable of the toolkit. Missing keys take their defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Instance occlusion score at which a sample's loss weight doubles.
    pub thr_occ: f64,
    pub map: MapParams,
    pub select: SelectParams,
    pub nms: NmsParams,
    pub loss: LossWeights,
    pub oracle: OracleDetectorParams,
    pub eval: EvalParams,
    pub synth: SynthParams,
    pub tpp: TppSection,
    pub visdrone: VisdroneParams,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            thr_occ: 45.0,
            map: MapParams::default(),
            select: SelectParams::default(),
            nms: NmsParams::default(),
            loss: LossWeights::default(),
            oracle: OracleDetectorParams::default(),
            eval: EvalParams::default(),
            synth: SynthParams::default(),
            tpp: TppSection::default(),
            visdrone: VisdroneParams::default(),
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let wrap = |section: &str, r: Result<()>| r.map_err(|e| Error::Config(format!("[{section}] {e}")));
        if !(self.thr_occ >= 0.0 && self.thr_occ.is_finite()) {
            return Err(Error::Config(format!("thr_occ must be finite and >= 0, got {}", self.thr_occ)));
        }
        wrap("map", self.map.validate())?;
        wrap("select", self.select.validate())?;
        wrap("nms", self.nms.validate())?;
        wrap("loss", self.loss.validate())?;
        wrap("oracle", self.oracle.validate())?;
        wrap("eval", self.eval.validate())?;
        wrap("synth", self.synth.validate())?;
        wrap("tpp", self.tpp_params().validate())?;
        if !(0.0..=1.0).contains(&self.tpp.augment_min_visible) {
            return Err(Error::Config("[tpp] augment_min_visible must lie in [0, 1]".into()));
        }
        wrap("visdrone", self.visdrone.validate())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = super::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn tpp_params(&self) -> TppParams {
        TppParams {
            select: self.select,
            nms: self.nms,
            n_sub: self.tpp.n_sub,
            coarse_size: self.tpp.coarse_size,
            fine_size: self.tpp.fine_size,
        }
    }
}
