//! Chi-square helpers shared by the statistical test targets.

use std::collections::{BTreeMap, BTreeSet};

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson goodness-of-fit p-value; cells with expected count below 5 are pooled.
pub fn gof_p_value(observed: &BTreeMap<i64, u64>, pmf: &BTreeMap<i64, f64>, total: u64) -> f64 {
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut pooled_o, mut pooled_e) = (0.0, 0.0);
    for (s, &p) in pmf {
        let e = p * total as f64;
        let o = *observed.get(s).unwrap_or(&0) as f64;
        if e < 5.0 {
            pooled_o += o;
            pooled_e += e;
        } else {
            cells.push((o, e));
        }
    }
    if pooled_e > 0.0 {
        cells.push((pooled_o, pooled_e));
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    ChiSquared::new((cells.len() - 1) as f64).unwrap().sf(stat)
}

/// Chi-square test of homogeneity between two count tables.
pub fn homogeneity_p_value(a: &BTreeMap<i64, u64>, b: &BTreeMap<i64, u64>) -> f64 {
    let keys: Vec<i64> = a
        .keys()
        .chain(b.keys())
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let na: f64 = a.values().sum::<u64>() as f64;
    let nb: f64 = b.values().sum::<u64>() as f64;
    let mut stat = 0.0;
    let mut cells = 0;
    let (mut pa, mut pb) = (0.0, 0.0);
    let flush = |oa: f64, ob: f64, stat: &mut f64| {
        let tot = oa + ob;
        let ea = tot * na / (na + nb);
        let eb = tot * nb / (na + nb);
        *stat += (oa - ea).powi(2) / ea + (ob - eb).powi(2) / eb;
    };
    for k in keys {
        let oa = *a.get(&k).unwrap_or(&0) as f64;
        let ob = *b.get(&k).unwrap_or(&0) as f64;
        if oa + ob < 10.0 {
            pa += oa;
            pb += ob;
        } else {
            flush(oa, ob, &mut stat);
            cells += 1;
        }
    }
    if pa + pb > 0.0 {
        flush(pa, pb, &mut stat);
        cells += 1;
    }
    ChiSquared::new((cells - 1) as f64).unwrap().sf(stat)
}
