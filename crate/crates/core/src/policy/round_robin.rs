use std::collections::BTreeSet;

use super::{Policy, SignalAccess, WaveView};
use crate::task::Placement;

/// Device rotation under dependency readiness.
#[derive(Clone, Debug, Default)]
pub struct RoundRobinPolicy {
    next: usize,
}

impl Policy for RoundRobinPolicy {
    fn name(&self) -> &str {
        "round_robin"
    }

    fn signals(&self) -> SignalAccess {
        SignalAccess::NONE
    }

    fn plan_wave(&mut self, view: &WaveView<'_>) -> Vec<Placement> {
        let devices = view.devices();
        let n = devices.len();
        let mut used = BTreeSet::new();
        let mut out = Vec::new();
        for v in view.frontier() {
            let eligible = view.eligible(v);
            let pick = (0..n).map(|i| (self.next + i) % n).find(|&i| {
                let d = &devices[i];
                eligible.contains(d) && !used.contains(d)
            });
            if let Some(i) = pick {
                used.insert(devices[i].clone());
                out.push(Placement::new(v.clone(), 0, devices[i].clone()));
                self.next = (i + 1) % n;
            }
        }
        out
    }
}
