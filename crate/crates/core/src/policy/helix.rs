use std::collections::BTreeSet;

use super::{argmin_device, Load, Policy, SignalAccess, Transfer, WaveView};
use crate::ids::StageId;
use crate::task::Placement;

/// Heterogeneity-aware earliest-finish placement, transfer and switch aware.
#[derive(Clone, Copy, Debug, Default)]
pub struct HelixPolicy;

impl Policy for HelixPolicy {
    fn name(&self) -> &str {
        "helix"
    }

    fn signals(&self) -> SignalAccess {
        SignalAccess {
            load: Load::Full,
            residency: true,
            transfer: Transfer::Full,
            prefix: false,
            compute: true,
            dag: false,
            cost_model: false,
        }
    }

    fn plan_wave(&mut self, view: &WaveView<'_>) -> Vec<Placement> {
        let mut order: Vec<&StageId> = view.frontier().iter().collect();
        order.sort_by(|a, b| view.mean_base_cost(b).total_cmp(&view.mean_base_cost(a)).then_with(|| a.cmp(b)));
        let mut used = BTreeSet::new();
        let mut out = Vec::new();
        for v in order {
            let finish = |d: &_| {
                (view.device_free(d) - view.clock()) + view.switch_time(v, d) + view.transfer_time(v, d) + view.base_cost(v, d)
            };
            if let Some(d) = argmin_device(view, v, &used, finish) {
                used.insert(d.clone());
                out.push(Placement::new(v.clone(), 0, d));
            }
        }
        out
    }
}
