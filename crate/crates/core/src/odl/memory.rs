//! Byte and operation accounting of the on-device runtime.

use serde::{Deserialize, Serialize};

use super::engine::{OdlConfig, OdlStrategy};
use crate::error::{Error, Result};
use crate::nn::ModelConfig;

/// Working memory is live only during a step; storage persists across
/// phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Working,
    Storage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryItem {
    pub name: String,
    pub tier: Tier,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBudget {
    pub strategy: OdlStrategy,
    pub er_capacity: usize,
    pub items: Vec<MemoryItem>,
    pub working_bytes: u64,
    pub storage_bytes: u64,
    pub total_bytes: u64,
}

impl MemoryBudget {
    pub fn item(&self, name: &str) -> Option<u64> {
        self.items.iter().find(|i| i.name == name).map(|i| i.bytes)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

const F32: u64 = 4;
/// i32 multiplier, u8 shift and i64 bias per output channel.
const REQUANT_BYTES: u64 = 13;

/// Itemized bytes the runtime holds for `odl.strategy`. The replay memory
/// keeps int8 trials (`channels × samples` bytes each), plus their float
/// features when feature caching is on.
pub fn memory_report(model: &ModelConfig, odl: &OdlConfig) -> Result<MemoryBudget> {
    if odl.strategy == OdlStrategy::Ewc {
        return Err(Error::Unsupported("EWC is not available on device".into()));
    }
    let c = model.n_channels as u64;
    let t = model.n_samples as u64;
    let m = model.spatial_maps() as u64;
    let f2 = model.separable_filters as u64;
    let t1 = model.len_after_pool1() as u64;
    let nf = model.feature_len() as u64;
    let nc = model.n_classes as u64;
    let batch = odl.batch_size as u64;
    let head_params = nf * nc + nc;
    let trial = c * t;

    let weights = model.temporal_filters as u64 * model.temporal_kernel as u64
        + m * c
        + m * model.separable_kernel as u64
        + f2 * m;
    // largest pair of consecutive int8 activation maps of the backbone
    let maps = [trial, m * t, m * t1, m * t1, f2 * t1, nf];
    let scratch = maps.windows(2).map(|w| w[0] + w[1]).max().unwrap_or(0);

    let mut items = vec![
        (
            "backbone_weights",
            Tier::Storage,
            weights + REQUANT_BYTES * (2 * m + f2),
        ),
        ("head_parameters", Tier::Storage, head_params * F32),
        ("input_trial", Tier::Working, trial),
        ("activation_scratch", Tier::Working, scratch),
        ("feature_batch", Tier::Working, batch * nf * F32),
        ("head_logits", Tier::Working, batch * nc * F32),
        ("head_gradients", Tier::Working, head_params * F32),
        ("optimizer_state", Tier::Working, 2 * head_params * F32),
    ];
    match odl.strategy {
        OdlStrategy::Er => {
            let k = odl.er_capacity as u64;
            items.push(("replay_buffer", Tier::Storage, k * trial));
            if odl.feature_cache {
                items.push(("replay_feature_cache", Tier::Storage, k * nf * F32));
            }
        }
        OdlStrategy::Lwf => {
            items.push(("previous_head", Tier::Storage, head_params * F32));
            items.push(("previous_logits", Tier::Working, batch * nc * F32));
        }
        _ => {}
    }
    let items: Vec<MemoryItem> = items
        .into_iter()
        .map(|(name, tier, bytes)| MemoryItem {
            name: name.into(),
            tier,
            bytes,
        })
        .collect();
    let sum = |tier| items.iter().filter(|i| i.tier == tier).map(|i| i.bytes).sum::<u64>();
    let (working_bytes, storage_bytes) = (sum(Tier::Working), sum(Tier::Storage));
    Ok(MemoryBudget {
        strategy: odl.strategy,
        er_capacity: if odl.strategy == OdlStrategy::Er { odl.er_capacity } else { 0 },
        items,
        working_bytes,
        storage_bytes,
        total_bytes: working_bytes + storage_bytes,
    })
}

/// Multiply-accumulates of one trial, by layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacReport {
    pub layers: Vec<(String, u64)>,
    pub backbone_forward: u64,
    pub head_forward: u64,
    /// Weight gradient of the head (the input gradient is never needed).
    pub head_backward: u64,
}

pub fn mac_report(model: &ModelConfig) -> MacReport {
    let c = model.n_channels as u64;
    let t = model.n_samples as u64;
    let f1 = model.temporal_filters as u64;
    let m = model.spatial_maps() as u64;
    let t1 = model.len_after_pool1() as u64;
    let f2 = model.separable_filters as u64;
    let nf = model.feature_len() as u64;
    let nc = model.n_classes as u64;
    let layers = vec![
        ("temporal".to_string(), f1 * model.temporal_kernel as u64 * c * t),
        ("spatial".to_string(), m * c * t),
        ("separable_depthwise".to_string(), m * model.separable_kernel as u64 * t1),
        ("pointwise".to_string(), f2 * m * t1),
        ("dense".to_string(), nf * nc),
    ];
    let backbone_forward = layers[..4].iter().map(|l| l.1).sum();
    MacReport {
        layers,
        backbone_forward,
        head_forward: nf * nc,
        head_backward: nf * nc,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget(strategy: OdlStrategy, k: usize) -> MemoryBudget {
        let cfg = OdlConfig {
            strategy,
            er_capacity: k,
            ..OdlConfig::default()
        };
        memory_report(&ModelConfig::standard(2), &cfg).unwrap()
    }

    #[test]
    fn replay_of_twenty_costs_304_kb() {
        let tl = budget(OdlStrategy::Tl, 20);
        let er = budget(OdlStrategy::Er, 20);
        assert_eq!(er.item("replay_buffer"), Some(304_000));
        assert_eq!(er.total_bytes - tl.total_bytes, 304_000);
        assert_eq!(er.working_bytes, tl.working_bytes);
        assert_eq!(tl.item("head_parameters"), Some(7_432));
        for b in [&tl, &er] {
            assert_eq!(b.total_bytes, b.items.iter().map(|i| i.bytes).sum::<u64>());
        }
        assert_eq!(budget(OdlStrategy::Er, 200).item("replay_buffer"), Some(3_040_000));
    }

    #[test]
    fn feature_cache_is_accounted_separately() {
        let cfg = OdlConfig {
            strategy: OdlStrategy::Er,
            feature_cache: true,
            ..OdlConfig::default()
        };
        let b = memory_report(&ModelConfig::standard(2), &cfg).unwrap();
        assert_eq!(b.item("replay_feature_cache"), Some(20 * 928 * 4));
        assert_eq!(b.item("replay_buffer"), Some(304_000));
        let ewc = OdlConfig {
            strategy: OdlStrategy::Ewc,
            ..OdlConfig::default()
        };
        assert!(memory_report(&ModelConfig::standard(2), &ewc).is_err());
    }

    #[test]
    fn mac_counts() {
        let r = mac_report(&ModelConfig::standard(2));
        assert_eq!(r.layers[0].1, 16 * 64 * 8 * 1900);
        assert_eq!(r.head_forward, 1856);
        assert_eq!(r.backbone_forward, 15_564_800 + 486_400 + 788_736 + 242_688);
    }
}
