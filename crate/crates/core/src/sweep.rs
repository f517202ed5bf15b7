//! Multi-seed and multi-rate execution. Seeds run on the rayon pool when the
//! `parallel` feature is on; the sequential path is always available.

use crate::error::ScenarioError;
use crate::scenario::{run_seed, RunOutcome, Scenario};
use crate::types::Rate;

pub type SeedResult = Result<RunOutcome, ScenarioError>;

pub fn run_sequential(scn: &Scenario) -> Vec<SeedResult> {
    scn.seeds.iter().map(|&s| run_seed(scn, s)).collect()
}

#[cfg(feature = "parallel")]
pub fn run_parallel(scn: &Scenario) -> Vec<SeedResult> {
    use rayon::prelude::*;
    scn.seeds.par_iter().map(|&s| run_seed(scn, s)).collect()
}

/// Every seed of `scn`, in seed order.
pub fn run_all(scn: &Scenario) -> Vec<SeedResult> {
    #[cfg(feature = "parallel")]
    {
        run_parallel(scn)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_sequential(scn)
    }
}

/// One scenario per rate, each over all seeds.
pub fn run_rates(scn: &Scenario, rates: &[Rate]) -> Result<Vec<(Scenario, Vec<SeedResult>)>, ScenarioError> {
    let scns: Vec<Scenario> = rates.iter().map(|&r| scn.with_rho(r)).collect();
    for s in &scns {
        s.validate()?;
    }
    #[cfg(feature = "parallel")]
    let results = {
        use rayon::prelude::*;
        scns.into_par_iter().map(|s| { let r = run_all(&s); (s, r) }).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results = scns.into_iter().map(|s| { let r = run_all(&s); (s, r) }).collect();
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scn() -> Scenario {
        Scenario::from_toml(
            r#"
scheduler = "single"
horizon = 300
seeds = [5, 6, 7]
[topology]
kind = "ring"
shards = 6
[workload]
rho = "1/24"
b = 2
k = 2
pattern = "hotspot"
[delay]
frak_d = 5
mode = "uniform"
"#,
        )
        .unwrap()
    }

    #[test]
    fn pool_and_sequential_agree() {
        let s = scn();
        let a = run_sequential(&s);
        let b = run_all(&s);
        let csv = |v: &[SeedResult]| v.iter().map(|o| o.as_ref().unwrap().log.txns_csv()).collect::<Vec<_>>();
        assert_eq!(csv(&a), csv(&b));
    }

    #[test]
    fn rate_list_names_each_scenario() {
        let out = run_rates(&scn(), &[Rate::new(1, 48), Rate::new(1, 24)]).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out[0].0.name.ends_with("rho1-48"));
        assert!(run_rates(&scn(), &[Rate::new(2, 1)]).is_err());
    }
}
