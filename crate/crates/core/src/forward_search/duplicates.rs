use std::collections::HashMap;

use crate::data::Dataset;

/// Groups of two or more rows with bitwise identical `(y, x)`.
pub fn duplicate_groups(data: &Dataset) -> Vec<Vec<usize>> {
    let p = data.p();
    let mut map: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
    for i in 0..data.n() {
        let mut key = Vec::with_capacity(p + 1);
        key.push(data.y()[i].to_bits());
        key.extend((0..p).map(|j| data.x()[(i, j)].to_bits()));
        map.entry(key).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = map.into_values().filter(|g| g.len() > 1).collect();
    groups.sort();
    groups
}

/// Result of thinning a collapsed subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Collapse {
    /// The subset with all but one member of each duplicated group removed.
    pub subset: Vec<usize>,
    /// Rows held back until the end of the search.
    pub deferred: Vec<usize>,
}

/// Thin a subset whose fit has degenerated because identical rows dominate
/// it. Every group with two or more members in the subset keeps its first
/// member there; the group's other rows are deferred. Without such groups the
/// subset comes back unchanged with nothing deferred.
pub fn handle_duplicate_collapse(data: &Dataset, subset: &[usize]) -> Collapse {
    collapse_with(&duplicate_groups(data), subset)
}

pub(crate) fn collapse_with(groups: &[Vec<usize>], subset: &[usize]) -> Collapse {
    let mut inside = vec![false; subset.iter().copied().max().map_or(0, |m| m + 1)];
    for &i in subset {
        inside[i] = true;
    }
    let is_in = |i: usize| inside.get(i).copied().unwrap_or(false);
    let mut deferred = Vec::new();
    for g in groups {
        let members: Vec<usize> = g.iter().copied().filter(|&i| is_in(i)).collect();
        if members.len() >= 2 {
            deferred.extend(g.iter().copied().filter(|&i| i != members[0]));
        }
    }
    deferred.sort_unstable();
    let subset = subset.iter().copied().filter(|i| deferred.binary_search(i).is_err()).collect();
    Collapse { subset, deferred }
}
