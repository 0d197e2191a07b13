use std::cmp::Ordering;
use std::collections::BTreeSet;

use super::{Load, Policy, SignalAccess, Transfer, WaveView};
use crate::ids::{DeviceId, StageId};
use crate::task::Placement;

/// Prefix-cache-aware greedy placement with same-model preference.
#[derive(Clone, Copy, Debug, Default)]
pub struct KvFlowPolicy;

/// Descendants sharing `v`'s prefix group.
pub(crate) fn prefix_descendants(view: &WaveView<'_>, v: &StageId) -> usize {
    let Some(g) = &view.stage(v).shared_prefix_group else { return 0 };
    view.dag()
        .descendants(v)
        .iter()
        .filter(|(_, w)| view.stage(w).shared_prefix_group.as_ref() == Some(g))
        .count()
}

impl Policy for KvFlowPolicy {
    fn name(&self) -> &str {
        "kvflow"
    }

    fn signals(&self) -> SignalAccess {
        SignalAccess {
            load: Load::Full,
            residency: true,
            transfer: Transfer::TieBreak,
            prefix: true,
            compute: true,
            dag: true,
            cost_model: false,
        }
    }

    fn plan_wave(&mut self, view: &WaveView<'_>) -> Vec<Placement> {
        let mut order: Vec<(bool, usize, f64, &StageId)> = view
            .frontier()
            .iter()
            .map(|v| (view.prefix_cached_anywhere(v), prefix_descendants(view, v), view.mean_base_cost(v), v))
            .collect();
        order.sort_by(|a, b| {
            b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(b.2.total_cmp(&a.2)).then_with(|| a.3.cmp(b.3))
        });
        let mut used: BTreeSet<DeviceId> = BTreeSet::new();
        let mut out = Vec::new();
        for (_, _, _, v) in order {
            let model = &view.stage(v).model;
            let key = |d: &DeviceId| {
                (
                    -view.prefix_overlap(v, d),
                    (view.residency(d) != Some(model)) as u8,
                    view.device_free(d),
                    view.transfer_tiebreak(v, d),
                )
            };
            let best = view
                .eligible(v)
                .iter()
                .filter(|d| !used.contains(*d))
                .map(|d| (key(d), d))
                .min_by(|(a, da), (b, db)| {
                    a.0.total_cmp(&b.0)
                        .then(a.1.cmp(&b.1))
                        .then(a.2.total_cmp(&b.2))
                        .then(a.3.total_cmp(&b.3))
                        .then_with(|| da.cmp(db))
                        .then(Ordering::Equal)
                });
            if let Some((_, d)) = best {
                used.insert(d.clone());
                out.push(Placement::new(v.clone(), 0, d.clone()));
            }
        }
        out
    }
}
