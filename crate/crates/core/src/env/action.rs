//! Mapping of the flat continuous action onto migration targets, CPU
//! shares and MTD switches.
//!
//! Layout of the raw vector (`V` vehicles, `S` RSUs):
//!
//! | range                  | meaning                                      |
//! |------------------------|----------------------------------------------|
//! | `[0, V·S)`             | pre-migration logit of vehicle `v` for RSU `s` at `v·S + s` |
//! | `[V·S, 2·V·S)`         | allocation logit of RSU `s` for vehicle `v` at `V·S + s·V + v` |
//! | `[2·V·S, 2·V·S + S)`   | MTD probability of RSU `s`                   |

use super::{EnvError, WorldConfig};

/// Threshold above which an MTD entry switches the defense on.
pub const MTD_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedAction {
    /// Pre-migration target per vehicle.
    pub targets: Vec<usize>,
    /// CPU share each vehicle receives from its current host.
    pub allocation: Vec<f64>,
    pub mtd: Vec<bool>,
    /// Vehicles whose every RSU was masked and that fell back to the
    /// highest-reputation RSU with spare capacity.
    pub fallbacks: Vec<usize>,
    /// Next-slot load per RSU implied by `targets`.
    pub next_loads: Vec<usize>,
}

impl DecodedAction {
    /// Sum of the CPU shares handed out by each RSU.
    pub fn allocation_sums(&self, hosted: &[usize], num_rsus: usize) -> Vec<f64> {
        let mut sums = vec![0.0; num_rsus];
        for (v, &s) in hosted.iter().enumerate() {
            sums[s] += self.allocation[v];
        }
        sums
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let mut probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    // rounding can leave the sum one ulp above 1
    while probs.iter().sum::<f64>() > 1.0 {
        for p in &mut probs {
            *p *= 1.0 - f64::EPSILON;
        }
    }
    probs
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Decodes `raw` given the current hosts and the reputation matrix
/// (row-major `V × S`).
pub fn decode_action(
    raw: &[f64],
    hosted: &[usize],
    reputation: &[f64],
    cfg: &WorldConfig,
) -> Result<DecodedAction, EnvError> {
    let (nv, ns) = (cfg.num_vehicles, cfg.num_rsus);
    if raw.len() != cfg.action_dim() {
        return Err(EnvError::ActionDimension {
            expected: cfg.action_dim(),
            actual: raw.len(),
        });
    }
    if let Some(i) = raw.iter().position(|x| !x.is_finite()) {
        return Err(EnvError::NonFiniteAction(i));
    }
    if hosted.len() != nv || reputation.len() != nv * ns {
        return Err(EnvError::InvalidArgument(format!(
            "expected {nv} hosts and {} reputation entries",
            nv * ns
        )));
    }
    if let Some(&s) = hosted.iter().find(|&&s| s >= ns) {
        return Err(EnvError::InvalidArgument(format!("host index {s} out of range")));
    }
    let max_load = cfg.max_load();
    let threshold = cfg.reputation_threshold;

    let mut next_loads = vec![0usize; ns];
    let mut targets = Vec::with_capacity(nv);
    let mut fallbacks = Vec::new();
    for v in 0..nv {
        let rep = &reputation[v * ns..(v + 1) * ns];
        let open: Vec<usize> = (0..ns)
            .filter(|&s| rep[s] >= threshold && next_loads[s] < max_load)
            .collect();
        let target = if open.is_empty() {
            fallbacks.push(v);
            let mut best: Option<usize> = None;
            for s in (0..ns).filter(|&s| next_loads[s] < max_load) {
                if best.is_none_or(|b| rep[s] > rep[b]) {
                    best = Some(s);
                }
            }
            best.ok_or(EnvError::CapacityExhausted)?
        } else {
            let logits: Vec<f64> = open.iter().map(|&s| raw[v * ns + s]).collect();
            open[argmax(&softmax(&logits))]
        };
        next_loads[target] += 1;
        targets.push(target);
    }

    let mut allocation = vec![0.0; nv];
    let alloc_base = nv * ns;
    for s in 0..ns {
        let members: Vec<usize> = (0..nv).filter(|&v| hosted[v] == s).collect();
        if members.is_empty() {
            continue;
        }
        let logits: Vec<f64> = members.iter().map(|&v| raw[alloc_base + s * nv + v]).collect();
        for (&v, share) in members.iter().zip(softmax(&logits)) {
            allocation[v] = share;
        }
    }

    let mtd_base = 2 * nv * ns;
    let mtd = (0..ns).map(|s| raw[mtd_base + s] > MTD_THRESHOLD).collect();

    Ok(DecodedAction {
        targets,
        allocation,
        mtd,
        fallbacks,
        next_loads,
    })
}
