use std::path::{Path, PathBuf};

use informed_mh::posterior::Hyperparams;
use informed_mh::proposals::ProposalSpec;
use informed_mh::sampler::InitMode;
use informed_mh::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything `imh run` needs; written next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub x: PathBuf,
    pub y: PathBuf,
    #[serde(default)]
    pub standardize: bool,
    pub kappa0: f64,
    pub kappa1: f64,
    #[serde(default)]
    pub g: Option<f64>,
    /// `None` means `min(p, n)`.
    #[serde(default)]
    pub s0: Option<usize>,
    /// A preset name or a full proposal spec object.
    pub proposal: serde_json::Value,
    #[serde(default)]
    pub screen_budget: Option<usize>,
    pub iters: usize,
    pub seed: u64,
    pub n_chains: usize,
    pub init: InitMode,
    #[serde(default)]
    pub lazy: bool,
    #[serde(default = "yes")]
    pub rao_blackwell: bool,
    pub out: PathBuf,
}

fn yes() -> bool {
    true
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn hyperparams(&self, s0: usize, p: usize) -> Result<Hyperparams> {
        let hp = Hyperparams::new(self.kappa0, self.kappa1, s0, p)?;
        match self.g {
            Some(g) => hp.with_g(g),
            None => Ok(hp),
        }
    }

    pub fn proposal(&self, p: usize, s0: usize) -> Result<ProposalSpec> {
        let spec = ProposalSpec::from_json(&self.proposal, p, s0)?;
        spec.validate(p)?;
        Ok(spec)
    }
}

/// `random:K`, `stepwise` or `explicit:i,j,...`.
pub fn parse_init(s: &str) -> Result<InitMode> {
    let bad = || Error::InvalidSpec(format!("cannot parse init mode {s:?}"));
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    match kind {
        "stepwise" if rest.is_empty() => Ok(InitMode::Stepwise),
        "random" => Ok(InitMode::RandomSize {
            k: rest.parse().map_err(|_| bad())?,
        }),
        "explicit" => {
            let gamma = rest
                .split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| t.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            Ok(InitMode::Explicit { gamma })
        }
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunConfig {
        RunConfig {
            x: "d/X.csv".into(),
            y: "d/y.csv".into(),
            standardize: false,
            kappa0: 2.0,
            kappa1: 1.5,
            g: Some(12.5),
            s0: None,
            proposal: serde_json::json!("lit1"),
            screen_budget: Some(100),
            iters: 2000,
            seed: 7,
            n_chains: 2,
            init: InitMode::Explicit { gamma: vec![3, 1] },
            lazy: true,
            rao_blackwell: true,
            out: "runs".into(),
        }
    }

    #[test]
    fn round_trips_through_json() {
        let c = sample();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        let explicit = RunConfig {
            proposal: serde_json::to_value(ProposalSpec::lb2()).unwrap(),
            ..sample()
        };
        let text = serde_json::to_string(&explicit).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), explicit);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = serde_json::to_value(sample()).unwrap();
        v["itres"] = serde_json::json!(10);
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn init_modes_parse() {
        assert_eq!(parse_init("stepwise").unwrap(), InitMode::Stepwise);
        assert_eq!(parse_init("random:10").unwrap(), InitMode::RandomSize { k: 10 });
        assert_eq!(
            parse_init("explicit:4, 2").unwrap(),
            InitMode::Explicit { gamma: vec![4, 2] }
        );
        assert_eq!(parse_init("explicit:").unwrap(), InitMode::Explicit { gamma: vec![] });
        assert!(parse_init("random:x").is_err());
        assert!(parse_init("greedy").is_err());
    }
}
