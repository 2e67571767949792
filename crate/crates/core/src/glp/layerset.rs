//! Four-stage construction of GLP layer sets.
//!
//! 1. FFN sub-layers with the same sub-index are collected across blocks and
//!    packed `M` at a time.
//! 2. The empty slots of each collection's last set are filled with whole
//!    `{WQ, WK, WV, WO}` quadruples, one layer per set.
//! 3. Remaining MHA layers form single-type sets of `M`; the remainder `q` is
//!    bundled only when `3M = 4N`.
//! 4. Whatever is left is mapped layer-wise.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::workload::{LayerId, LayerKind, ViTModelSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GlpLayerSet {
    /// Members in slot order; member `i` occupies slot `i` of every group.
    pub members: Vec<LayerId>,
    /// Slots per group (`M`).
    pub capacity: u32,
    pub origin_stage: u8,
}

impl GlpLayerSet {
    pub fn is_full(&self) -> bool {
        self.members.len() as u32 == self.capacity
    }

    fn free(&self) -> u32 {
        self.capacity - self.members.len() as u32
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StageTally {
    pub sets: u32,
    pub layers: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerSetPlan {
    pub group_size: u32,
    pub glp_sets: Vec<GlpLayerSet>,
    pub baseline_set: Vec<LayerId>,
    /// Stages 1 to 4 in order. Stage 2 counts the sets that received MHA layers.
    pub stage_counts: [StageTally; 4],
    /// Empty slots per FFN collection after stage 1.
    pub slack_per_collection: u32,
    /// MHA layers of each type left after stage 2.
    pub mha_remainder: u32,
    /// `divmod(mha_remainder, M)`.
    pub full_mha_sets_per_type: u32,
    pub mha_leftover: u32,
}

impl LayerSetPlan {
    pub fn ffn_sets(&self) -> usize {
        self.glp_sets.iter().filter(|s| s.origin_stage == 1).count()
    }

    pub fn mha_sets(&self) -> usize {
        self.glp_sets.iter().filter(|s| s.origin_stage == 3).count()
    }

    /// Every layer exactly once, shapes uniform, no concurrent pair in a set.
    pub fn check(&self, spec: &ViTModelSpec) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.glp_sets.iter().flat_map(|s| &s.members).chain(&self.baseline_set) {
            if !seen.insert(*id) {
                return Err(Error::Invariant(format!("layer {id} mapped twice")));
            }
        }
        let all: BTreeSet<_> = spec.static_layers().into_iter().map(|l| l.id).collect();
        if seen != all {
            let missing: Vec<_> = all.difference(&seen).map(|l| l.to_string()).collect();
            return Err(Error::Invariant(format!("layers not covered: {missing:?}")));
        }
        for set in &self.glp_sets {
            if set.members.len() as u32 > set.capacity {
                return Err(Error::Invariant("layer set over capacity".into()));
            }
            for (i, a) in set.members.iter().enumerate() {
                for b in &set.members[i + 1..] {
                    if a.concurrent_with(b) {
                        return Err(Error::Invariant(format!("{a} and {b} are concurrent")));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn build_layersets(spec: &ViTModelSpec, group_size: u32) -> Result<LayerSetPlan> {
    spec.validate()?;
    if group_size == 0 {
        return Err(Error::Model("group size must be at least 1".into()));
    }
    let m = group_size;
    let n = spec.blocks;
    let k = spec.ffn_ratio();
    let mut tallies = [StageTally::default(); 4];

    // Stage 1
    let sets_per_collection = (2 * n).div_ceil(m);
    let mut sets = Vec::new();
    let mut slack_sets = Vec::new();
    for sub in 0..k {
        let collection: Vec<LayerId> = (0..n)
            .flat_map(|b| [LayerId::ffn(b, LayerKind::W1, sub), LayerId::ffn(b, LayerKind::W2, sub)])
            .collect();
        for chunk in collection.chunks(m as usize) {
            let set = GlpLayerSet {
                members: chunk.to_vec(),
                capacity: m,
                origin_stage: 1,
            };
            if !set.is_full() {
                slack_sets.push(sets.len());
            }
            sets.push(set);
        }
    }
    tallies[0] = StageTally {
        sets: k * sets_per_collection,
        layers: 2 * n * k,
    };
    let slack = m * sets_per_collection - 2 * n;

    // Stage 2
    let mut filled_blocks = 0;
    let mut touched = BTreeSet::new();
    if slack > 0 {
        let wanted = (slack * k.div_ceil(4)).min(n);
        while filled_blocks < wanted {
            let mut candidates: Vec<usize> = slack_sets.iter().copied().filter(|&s| sets[s].free() > 0).collect();
            if candidates.len() < 4 {
                break;
            }
            candidates.sort_by_key(|&s| (std::cmp::Reverse(sets[s].free()), s));
            let mut chosen = candidates[..4].to_vec();
            chosen.sort_unstable();
            for (kind, s) in LayerKind::MHA.into_iter().zip(chosen) {
                sets[s].members.push(LayerId::mha(filled_blocks, kind));
                touched.insert(s);
            }
            filled_blocks += 1;
        }
    }
    tallies[1] = StageTally {
        sets: touched.len() as u32,
        layers: 4 * filled_blocks,
    };

    // Stage 3
    let remainder = n - filled_blocks;
    let (p, q) = (remainder / m, remainder % m);
    let mut baseline = Vec::new();
    let stage3_start = sets.len();
    for kind in LayerKind::MHA {
        for j in 0..p {
            let first = filled_blocks + j * m;
            sets.push(GlpLayerSet {
                members: (first..first + m).map(|b| LayerId::mha(b, kind)).collect(),
                capacity: m,
                origin_stage: 3,
            });
        }
    }
    if q > 0 {
        let leftover = |kind| (filled_blocks + p * m..n).map(move |b| LayerId::mha(b, kind));
        if 3 * m == 4 * n {
            let mut bundles: Vec<GlpLayerSet> = [LayerKind::Wq, LayerKind::Wk, LayerKind::Wv]
                .into_iter()
                .map(|kind| GlpLayerSet {
                    members: leftover(kind).collect(),
                    capacity: m,
                    origin_stage: 3,
                })
                .collect();
            for (i, wo) in leftover(LayerKind::Wo).enumerate() {
                let target = (0..3).map(|o| (i + o) % 3).find(|&s| bundles[s].free() > 0);
                match target {
                    Some(s) => bundles[s].members.push(wo),
                    None => baseline.push(wo),
                }
            }
            sets.extend(bundles);
        } else {
            for kind in LayerKind::MHA {
                baseline.extend(leftover(kind));
            }
        }
    }
    tallies[2] = StageTally {
        sets: (sets.len() - stage3_start) as u32,
        layers: sets[stage3_start..].iter().map(|s| s.members.len() as u32).sum(),
    };

    // Stage 4
    baseline.sort_unstable();
    tallies[3] = StageTally {
        sets: 0,
        layers: baseline.len() as u32,
    };

    Ok(LayerSetPlan {
        group_size: m,
        glp_sets: sets,
        baseline_set: baseline,
        stage_counts: tallies,
        slack_per_collection: slack,
        mha_remainder: remainder,
        full_mha_sets_per_type: p,
        mha_leftover: q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: u32, k: u32) -> ViTModelSpec {
        ViTModelSpec::new("t", 16, 16 * k, n, 2, 4)
    }

    #[test]
    fn vit_b_group_8() {
        let plan = build_layersets(&ViTModelSpec::vit_b16(), 8).unwrap();
        plan.check(&ViTModelSpec::vit_b16()).unwrap();
        assert_eq!(plan.ffn_sets(), 12);
        assert!(plan.glp_sets.iter().all(|s| s.is_full()));
        assert_eq!(plan.slack_per_collection, 0);
        assert_eq!(plan.stage_counts[1], StageTally::default());
        assert_eq!((plan.mha_remainder, plan.full_mha_sets_per_type, plan.mha_leftover), (12, 1, 4));
        assert_eq!(plan.mha_sets(), 4);
        assert_eq!(plan.baseline_set.len(), 16);
    }

    #[test]
    fn vit_l_group_8_has_no_baseline() {
        let plan = build_layersets(&ViTModelSpec::vit_l16(), 8).unwrap();
        plan.check(&ViTModelSpec::vit_l16()).unwrap();
        assert_eq!(plan.ffn_sets(), 24);
        assert_eq!(plan.mha_sets(), 12);
        assert!(plan.baseline_set.is_empty());
    }

    #[test]
    fn single_block_clamps_slack_filling() {
        let s = spec(1, 4);
        let plan = build_layersets(&s, 8).unwrap();
        plan.check(&s).unwrap();
        assert_eq!(plan.ffn_sets(), 4);
        assert_eq!(plan.slack_per_collection, 6);
        assert_eq!(plan.stage_counts[1], StageTally { sets: 4, layers: 4 });
        let empty: u32 = plan.glp_sets.iter().map(|s| s.free()).sum();
        assert_eq!(empty, 20);
        assert!(plan.baseline_set.is_empty());
        // the quadruple is spread over four distinct sets
        for set in &plan.glp_sets {
            assert_eq!(set.members.iter().filter(|l| !l.kind.is_ffn()).count(), 1);
        }
    }

    #[test]
    fn three_m_equals_four_n_bundles_remainders() {
        // N=6, k=4, M=8: stage 2 fills 4 quadruples, R=2, 3M = 4N = 24
        let s = spec(6, 4);
        let plan = build_layersets(&s, 8).unwrap();
        plan.check(&s).unwrap();
        assert_eq!(plan.stage_counts[1], StageTally { sets: 4, layers: 16 });
        assert_eq!((plan.mha_remainder, plan.full_mha_sets_per_type, plan.mha_leftover), (2, 0, 2));
        let bundles: Vec<_> = plan.glp_sets.iter().filter(|s| s.origin_stage == 3).collect();
        assert_eq!(bundles.len(), 3);
        // WO remainders go round-robin, earlier sets first
        let wo: Vec<usize> = bundles
            .iter()
            .map(|s| s.members.iter().filter(|l| l.kind == LayerKind::Wo).count())
            .collect();
        assert_eq!(wo, vec![1, 1, 0]);
        assert!(plan.baseline_set.is_empty());
    }

    #[test]
    fn k_below_four_cannot_spread_quadruples() {
        let s = spec(3, 1);
        let plan = build_layersets(&s, 8).unwrap();
        plan.check(&s).unwrap();
        assert_eq!(plan.stage_counts[1].layers, 0);
        assert_eq!(plan.baseline_set.len(), 12);
    }

    #[test]
    fn group_size_one_degenerates_to_singletons() {
        let s = spec(2, 2);
        let plan = build_layersets(&s, 1).unwrap();
        plan.check(&s).unwrap();
        assert!(plan.glp_sets.iter().all(|s| s.members.len() == 1));
        assert!(plan.baseline_set.is_empty());
    }

    #[test]
    fn deterministic() {
        let s = ViTModelSpec::vit_s16();
        assert_eq!(build_layersets(&s, 8).unwrap(), build_layersets(&s, 8).unwrap());
    }

    /// Exactly-once coverage and set validity over a grid of shapes.
    #[test]
    fn coverage_over_grid() {
        for n in 1..=13 {
            for k in 1..=9 {
                for m in [1, 2, 3, 4, 5, 8, 16] {
                    let s = spec(n, k);
                    let plan = build_layersets(&s, m).unwrap();
                    plan.check(&s).unwrap_or_else(|e| panic!("N={n} k={k} M={m}: {e}"));
                    let covered: usize = plan.glp_sets.iter().map(|s| s.members.len()).sum::<usize>()
                        + plan.baseline_set.len();
                    assert_eq!(covered as u64, s.static_layer_count());
                    if (2 * n) % m == 0 && k % 4 == 0 && n % m == 0 {
                        assert!(plan.baseline_set.is_empty(), "N={n} k={k} M={m}");
                    }
                }
            }
        }
    }
}
