use super::SparsityPattern;
use crate::{Error, Result};

fn pattern(n: usize, m: usize) -> SparsityPattern {
    SparsityPattern::new(n, m).expect("schedule construction keeps 1 <= n <= m")
}

/// Structure-decay stepwise schedule: `(m−1):m`, then `(m/2):m`, `(m/4):m`, …
/// down to the target `n:m`. Requires `m / n` to be a power of two.
pub fn stepwise_schedule(target: SparsityPattern) -> Result<Vec<SparsityPattern>> {
    let (n, m) = (target.n(), target.m());
    if m % n != 0 || !(m / n).is_power_of_two() {
        return Err(Error::Config(format!(
            "stepwise schedule cannot reach {target} by halving from {m}:{m}"
        )));
    }
    if n + 1 >= m {
        return Ok(vec![target]);
    }
    let mut stages = vec![pattern(m - 1, m)];
    let mut keep = m / 2;
    while keep >= n {
        stages.push(pattern(keep, m));
        keep /= 2;
    }
    Ok(stages)
}

/// Structure-decay geometric schedule: `(k·n):(k·m)`, `(k/2·n):(k/2·m)`, …
/// down to `n:m`, all with the same density. `k` must be a power of two.
pub fn geometric_schedule(target: SparsityPattern, k_geo: usize) -> Result<Vec<SparsityPattern>> {
    if !k_geo.is_power_of_two() {
        return Err(Error::Config(format!(
            "geometric multiplier must be a power of two, got {k_geo}"
        )));
    }
    let mut stages = Vec::new();
    let mut k = k_geo;
    while k >= 1 {
        stages.push(pattern(k * target.n(), k * target.m()));
        k /= 2;
    }
    Ok(stages)
}

/// Split `total` steps across `stages` intervals whose lengths differ by at
/// most one; earlier intervals take the remainder.
pub fn interval_partition(total: usize, stages: usize) -> Result<Vec<usize>> {
    if total == 0 || stages == 0 {
        return Err(Error::Config(format!(
            "interval partition needs positive sizes, got {total} steps over {stages} stages"
        )));
    }
    if stages > total {
        return Err(Error::Config(format!(
            "{stages} schedule stages do not fit into {total} decay steps"
        )));
    }
    let (base, rem) = (total / stages, total % stages);
    Ok((0..stages).map(|i| base + usize::from(i < rem)).collect())
}
