use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::Candidate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParetoAxis {
    Flops,
    Params,
}

impl std::str::FromStr for ParetoAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "flops" => Ok(Self::Flops),
            "params" => Ok(Self::Params),
            _ => Err(format!("unknown axis {s:?} (expected flops or params)")),
        }
    }
}

/// Items no other item dominates, sorted by x then y. `a` dominates `b`
/// when `a.x <= b.x && a.y < b.y` or `a.x < b.x && a.y <= b.y`; exact ties
/// are all kept.
pub fn pareto_front<T: Clone>(items: &[T], key: impl Fn(&T) -> (f64, f64)) -> Vec<T> {
    let mut order: Vec<(f64, f64, usize)> = items
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let (x, y) = key(t);
            (x, y, i)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = Vec::new();
    // lowest y among strictly smaller x
    let mut best_before = f64::INFINITY;
    let mut i = 0;
    while i < order.len() {
        let x = order[i].0;
        let mut j = i;
        while j < order.len() && order[j].0 == x {
            j += 1;
        }
        let group_min = order[i].1;
        for &(_, y, idx) in &order[i..j] {
            if y == group_min && y < best_before {
                out.push(items[idx].clone());
            }
        }
        best_before = best_before.min(group_min);
        i = j;
    }
    out
}

/// Front of a search history against AEPE, one entry per distinct genome.
pub fn candidate_front(history: &[Candidate], axis: ParetoAxis) -> Vec<Candidate> {
    let mut seen = HashSet::new();
    let unique: Vec<Candidate> = history.iter().filter(|c| seen.insert(&c.genome)).cloned().collect();
    pareto_front(&unique, |c| {
        let x = match axis {
            ParetoAxis::Flops => c.flops,
            ParetoAxis::Params => c.params,
        };
        (x as f64, c.metrics.aepe)
    })
}
