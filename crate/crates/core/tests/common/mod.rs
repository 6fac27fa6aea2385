//! Two-controller scenes shared by the grouping tests.

use std::collections::{BTreeMap, BTreeSet};

use fhss_core::evaluation::{match_hops, EvalConfig};
use fhss_core::extraction::HopRecord;
use fhss_core::synth::{Scenario, ScenarioSource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const T1_S: f64 = 6.8e-3;
/// Offsets between sources, in congruence tolerances.
const PHASE_SEPARATION_TOLS: f64 = 3.0;

/// Two interleaved controllers with the same timing; the second is offset so that
/// every cross-source phase difference stays `PHASE_SEPARATION_TOLS` tolerances from 0.
pub fn two_source_scene(seed: u64, snr_db: Option<f64>, tol_s: f64) -> Scenario {
    let mut s = Scenario::futaba(0.0, seed);
    s.capture_id = "two-sources".into();
    s.channel.snr_db = snr_db;
    let offsets = s.sources[0].profile.in_period_offsets_s();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x8888);
    let phi = loop {
        let phi = rng.random_range(0.0..T1_S);
        let clear = offsets.iter().all(|&a| {
            offsets.iter().all(|&b| {
                let d = (phi + b - a).rem_euclid(T1_S);
                d.min(T1_S - d) >= PHASE_SEPARATION_TOLS * tol_s
            })
        });
        if clear {
            break phi;
        }
    };
    let mut second = s.sources[0].clone();
    second.profile.source_id = 1;
    for f in &mut second.profile.frequency_set_hz {
        *f += 1.25e6;
    }
    second.start_offset_s += phi;
    s.sources.push(ScenarioSource { ..second });
    s.reseeded(seed)
}

/// Matched hops whose label disagrees with the best one-to-one group/source map,
/// plus matched hops left unlabelled.
pub fn misassigned(scene: &Scenario, hops: &[HopRecord]) -> (usize, usize) {
    let syn_truth = scene.hop_plan().unwrap();
    let m = match_hops(&syn_truth, scene.center_frequency_hz, hops, &EvalConfig::default()).unwrap();
    let mut counts: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    for &(ti, ei) in &m.pairs {
        if let Some(g) = hops[ei].source_id {
            *counts.entry((g, syn_truth[ti].source_id)).or_default() += 1;
        }
    }
    let mut ranked: Vec<_> = counts.iter().map(|(&(g, s), &n)| (n, g, s)).collect();
    ranked.sort_by(|a, b| b.cmp(a));
    let (mut used_g, mut used_s, mut agree) = (BTreeSet::new(), BTreeSet::new(), 0);
    for (n, g, s) in ranked {
        if !used_g.contains(&g) && !used_s.contains(&s) {
            used_g.insert(g);
            used_s.insert(s);
            agree += n;
        }
    }
    (m.pairs.len() - agree, m.pairs.len())
}
