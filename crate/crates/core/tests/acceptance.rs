//! Acceptance checks, one per criterion. Runs without the libtest harness so
//! every criterion prints a PASS/FAIL line; exits non-zero if any fails.

use std::collections::HashMap;
use std::fs;
use std::num::NonZeroUsize;
use std::panic;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nearby_exposure::audit::{
    classify_exposure, classify_ledger, classify_rating, disparity_table, load_disparity, ExposureClass, RatingClass,
    RatingMode, OUTPUT_FILES,
};
use nearby_exposure::bias::{
    bias_measures, exposure_from_log, fit_attention, relevance_scores, GeometricAttention, RelevanceMode,
};
use nearby_exposure::geo::{haversine_distance, GeoPoint};
use nearby_exposure::ingest::{BusinessRecord, ClickLogRecord};
use nearby_exposure::queries::{kmeans, popularity_scores, KMeansParams, LocationQuery, QueryKind};
use nearby_exposure::simulate::{
    rank_distance_profile, run_campaign, Catalog, RankedEntry, RankedList, Scenario, SearchLog, SearchParams,
};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.2}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

fn business(id: String, lat: f64, lon: f64, rating: f64, scale: f64) -> BusinessRecord {
    BusinessRecord {
        name: format!("Business {id}"),
        id,
        point: GeoPoint::new(lat, lon).unwrap(),
        mean_rating: rating,
        rating_scale_max: scale,
        platform: "synthetic".into(),
    }
}

fn query(id: String, lat: f64, lon: f64) -> LocationQuery {
    LocationQuery {
        id,
        point: GeoPoint::new(lat, lon).unwrap(),
        kind: QueryKind::Centroid,
        popularity: 0.0,
    }
}

fn attention_model() -> Result<String, String> {
    let start = Instant::now();
    let mut ps: Vec<f64> = (0..25).map(|i| 0.01 + 0.04 * i as f64).collect();
    ps.push(0.99);
    let mut cases = 0;
    for &p in &ps {
        for kappa in [1usize, 15, 20, 50] {
            let a = GeometricAttention::new(p, kappa).map_err(|e| e.to_string())?;
            let w = a.weights();
            ensure(w.len() == kappa, || format!("p={p} kappa={kappa}: {} weights", w.len()))?;
            let sum: f64 = w.iter().sum();
            ensure((sum - 1.0).abs() <= 1e-12, || format!("p={p} kappa={kappa}: sum {sum}"))?;
            for t in 1..kappa {
                ensure(w[t] < w[t - 1], || format!("p={p} kappa={kappa}: not decreasing at {t}"))?;
                let ratio = w[t] / w[t - 1];
                ensure((ratio - (1.0 - p)).abs() <= 1e-12, || {
                    format!("p={p} kappa={kappa}: ratio {ratio} at {t}")
                })?;
            }
            cases += 1;
        }
    }
    within(start.elapsed(), 1.0)?;
    Ok(format!("{cases} (p, kappa) cases"))
}

fn fit_round_trip() -> Result<String, String> {
    let start = Instant::now();
    let kappa = 15;
    let mut worst = 0.0f64;
    for p_star in [0.1, 0.144, 0.5, 0.8] {
        // Expected clicks for 1e15 impressions; rounding is far below the
        // resolution that matters for the fit.
        let mut raw: Vec<f64> = (0..kappa).map(|t| p_star * (1.0f64 - p_star).powi(t as i32)).collect();
        let total: f64 = raw.iter().sum();
        raw.iter_mut().for_each(|v| *v /= total);
        let clicks: Vec<ClickLogRecord> = raw
            .iter()
            .enumerate()
            .map(|(t, w)| ClickLogRecord {
                position: t as u32 + 1,
                clicks: (w * 1e15).round() as u64,
            })
            .collect();
        let fitted = fit_attention(&clicks, kappa).map_err(|e| e.to_string())?;
        let err = (fitted.p() - p_star).abs();
        worst = worst.max(err);
        ensure(err <= 1e-6, || format!("p*={p_star}: fitted {}", fitted.p()))?;
    }
    within(start.elapsed(), 1.0)?;
    Ok(format!("max |p - p*| = {worst:.2e}"))
}

fn exposure_oracle() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_rel = 0.0f64;
    for instance in 0..200 {
        let n_business = rng.gen_range(1..=20);
        let n_query = rng.gen_range(1..=10);
        let kappa = rng.gen_range(1..=5);
        let p = rng.gen_range(0.05..0.95);
        let records: Vec<BusinessRecord> = (0..n_business)
            .map(|i| {
                let scale = if rng.gen_bool(0.5) { 5.0 } else { 10.0 };
                let rating = (rng.gen_range(0.0..=scale) * 2.0f64).round() / 2.0;
                business(format!("b{i}"), 0.0, 0.0, rating.min(scale), scale)
            })
            .collect();
        let catalog = Catalog::new(records.clone()).unwrap();
        let lists: Vec<RankedList> = (0..n_query)
            .map(|q| {
                let mut ids: Vec<usize> = (0..n_business).collect();
                ids.shuffle(&mut rng);
                ids.truncate(rng.gen_range(1..=n_business));
                RankedList {
                    query_id: format!("q{q}"),
                    entries: ids
                        .into_iter()
                        .map(|i| RankedEntry {
                            business_id: format!("b{i}"),
                            distance: None,
                        })
                        .collect(),
                }
            })
            .collect();
        let weights: Vec<f64> = if rng.gen_bool(0.5) {
            vec![1.0 / n_query as f64; n_query]
        } else {
            let raw: Vec<f64> = (0..n_query).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        };
        let log = SearchLog::new(lists.clone(), Scenario::PopularityWeighted, weights.clone()).unwrap();
        let attention = GeometricAttention::new(p, kappa).unwrap();
        let ledger = exposure_from_log(&log, &attention, &relevance_scores(&catalog, RelevanceMode::PerQuerySimplex))
            .map_err(|e| e.to_string())?;

        // independent double loop
        let norm: f64 = (0..kappa).map(|s| p * (1.0 - p).powi(s as i32)).sum();
        let omega = |rank: usize| if rank <= kappa { p * (1.0 - p).powi(rank as i32 - 1) / norm } else { 0.0 };
        let rating_of: HashMap<&str, f64> =
            records.iter().map(|b| (b.id.as_str(), b.mean_rating / b.rating_scale_max)).collect();
        for (row, b) in ledger.rows.iter().zip(&records) {
            let (mut e, mut v, mut n) = (0.0f64, 0.0f64, 0usize);
            for (list, w) in lists.iter().zip(&weights) {
                let list_total: f64 = list.entries.iter().map(|x| rating_of[x.business_id.as_str()]).sum();
                for (t, entry) in list.entries.iter().enumerate() {
                    if entry.business_id == b.id {
                        e += w * omega(t + 1);
                        let r = rating_of[b.id.as_str()];
                        v += w * if list_total > 0.0 { r / list_total } else { r };
                        n += 1;
                    }
                }
            }
            ensure(row.appearances == n, || format!("instance {instance}: appearances differ for {}", b.id))?;
            for (got, want, what) in [(row.e_total, e, "E"), (row.v_total, v, "V")] {
                let rel = (got - want).abs() / want.abs().max(1e-300);
                let ok = got == want || rel <= 1e-12;
                if want != 0.0 {
                    max_rel = max_rel.max(rel);
                }
                ensure(ok, || format!("instance {instance} {what}({}): {got} vs {want}", b.id))?;
            }
        }
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("200 instances, max relative error {max_rel:.1e}"))
}

fn meritocratic_fixed_point() -> Result<String, String> {
    // Latin square: every business at every rank once, equal ratings.
    let n = 12;
    let records: Vec<BusinessRecord> = (0..n).map(|i| business(format!("b{i}"), 0.0, 0.0, 4.0, 5.0)).collect();
    let catalog = Catalog::new(records).unwrap();
    let lists: Vec<RankedList> = (0..n)
        .map(|q| RankedList {
            query_id: format!("q{q}"),
            entries: (0..n)
                .map(|t| RankedEntry {
                    business_id: format!("b{}", (q + t) % n),
                    distance: None,
                })
                .collect(),
        })
        .collect();
    let log = SearchLog::new(lists, Scenario::Uniform, vec![1.0 / n as f64; n]).unwrap();
    let attention = GeometricAttention::new(0.144, n).unwrap();
    let relevance = relevance_scores(&catalog, RelevanceMode::PerQuerySimplex);
    let latin = bias_measures(&exposure_from_log(&log, &attention, &relevance).map_err(|e| e.to_string())?);

    // One search whose relevance profile is the attention curve itself.
    let kappa = 15;
    let attention = GeometricAttention::new(0.144, kappa).unwrap();
    let records: Vec<BusinessRecord> = (0..kappa)
        .map(|t| business(format!("r{t}"), 0.0, 0.0, 5.0 * attention.weights()[t] / attention.weights()[0], 5.0))
        .collect();
    let catalog = Catalog::new(records).unwrap();
    let list = RankedList {
        query_id: "q".into(),
        entries: (0..kappa)
            .map(|t| RankedEntry {
                business_id: format!("r{t}"),
                distance: None,
            })
            .collect(),
    };
    let log = SearchLog::new(vec![list], Scenario::Uniform, vec![1.0]).unwrap();
    let relevance = relevance_scores(&catalog, RelevanceMode::PerQuerySimplex);
    let proportional = bias_measures(&exposure_from_log(&log, &attention, &relevance).map_err(|e| e.to_string())?);

    for (name, m) in [("latin square", &latin), ("proportional", &proportional)] {
        ensure(m.cumulative_b <= 1e-9, || format!("{name}: cumulative_B {}", m.cumulative_b))?;
        ensure(m.merit_ratio_spread <= 1e-9, || format!("{name}: spread {}", m.merit_ratio_spread))?;
    }
    Ok(format!(
        "cumulative_B {:.1e} / {:.1e}, spread {:.1e} / {:.1e}",
        latin.cumulative_b, proportional.cumulative_b, latin.merit_ratio_spread, proportional.merit_ratio_spread
    ))
}

fn distance_monotonicity() -> Result<String, String> {
    let start = Instant::now();
    let mut rows = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(20..=200);
        let records: Vec<BusinessRecord> = (0..n)
            .map(|i| {
                business(
                    format!("b{i}"),
                    rng.gen_range(40.65..40.85),
                    rng.gen_range(-74.05..-73.85),
                    rng.gen_range(1.0..=5.0),
                    5.0,
                )
            })
            .collect();
        let catalog = Catalog::new(records).unwrap();
        let queries: Vec<LocationQuery> = (0..rng.gen_range(5..=40))
            .map(|q| query(format!("q{q}"), rng.gen_range(40.65..40.85), rng.gen_range(-74.05..-73.85)))
            .collect();
        let params = SearchParams {
            limit: NonZeroUsize::new(rng.gen_range(1..=50)).unwrap(),
            radius_cutoff: None,
        };
        let log = run_campaign(&queries, &catalog, &params, Scenario::Uniform).map_err(|e| e.to_string())?;
        let profile = rank_distance_profile(&log).map_err(|e| e.to_string())?;
        for pair in profile.windows(2) {
            ensure(pair[1].mean_km >= pair[0].mean_km, || {
                format!("seed {seed}: rank {} mean {} < rank {} mean {}", pair[1].rank, pair[1].mean_km, pair[0].rank, pair[0].mean_km)
            })?;
        }
        rows += profile.len();
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("50 catalogs, {rows} profile rows"))
}

/// Synthetic city for the hotspot criterion. Check-ins sit exactly on query
/// locations: 800 on the hotspot, 10 on each of the next 20 queries, none on
/// the remaining 79.
fn hotspot_city(seed: u64) -> (Catalog, Vec<LocationQuery>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<BusinessRecord> = (0..400)
        .map(|i| {
            let lat = rng.gen_range(40.70..40.80);
            let lon = rng.gen_range(-74.02..-73.92);
            let rating = f64::from(rng.gen_range(2..=10u32)) / 2.0;
            business(format!("b{i:03}"), lat, lon, rating, 5.0)
        })
        .collect();
    let mut queries: Vec<LocationQuery> = (0..100)
        .map(|q| query(format!("q{q:02}"), rng.gen_range(40.70..40.80), rng.gen_range(-74.02..-73.92)))
        .collect();
    let mut checkins = vec![queries[0].point; 800];
    for q in &queries[1..=20] {
        checkins.extend(std::iter::repeat_n(q.point, 10));
    }
    popularity_scores(&checkins, &queries).unwrap().apply(&mut queries);
    (Catalog::new(records).unwrap(), queries)
}

fn hotspot_disparity() -> Result<String, String> {
    let start = Instant::now();
    // per scenario: (High,LE)% and (Low,HE)%, plus the rendered table
    type Run = (Vec<(Scenario, f64, f64)>, String);
    let run = |seed| -> Result<Run, String> {
        let (catalog, queries) = hotspot_city(seed);
        ensure(queries[0].popularity == 0.8, || format!("hotspot popularity {}", queries[0].popularity))?;
        let params = SearchParams {
            limit: NonZeroUsize::new(20).unwrap(),
            radius_cutoff: Some(nearby_exposure::geo::Kilometers::new(8.0).unwrap()),
        };
        let base = run_campaign(&queries, &catalog, &params, Scenario::Uniform).map_err(|e| e.to_string())?;
        let popularity: HashMap<String, f64> = queries.iter().map(|q| (q.id.clone(), q.popularity)).collect();
        let attention = GeometricAttention::new(0.144, 20).unwrap();
        let relevance = relevance_scores(&catalog, RelevanceMode::PerQuerySimplex);
        let ratings = classify_rating(&catalog, RatingMode::Threshold).map_err(|e| e.to_string())?;

        let mut maps = Vec::new();
        let mut cells = Vec::new();
        for scenario in [Scenario::Uniform, Scenario::PopularityWeighted] {
            let log = base.reweighted(scenario, &popularity).map_err(|e| e.to_string())?;
            let ledger = exposure_from_log(&log, &attention, &relevance).map_err(|e| e.to_string())?;
            let (classes, _) = classify_ledger(&ledger).map_err(|e| e.to_string())?;

            // brute force: counting definition of the quartile tails
            let scores: Vec<f64> = ledger.rows.iter().map(|r| r.e_mean).collect();
            let m = (scores.len() as f64 * 0.25).ceil() as usize;
            let (mut high_n, mut high_le, mut low_n, mut low_he) = (0, 0, 0, 0);
            for (row, b) in ledger.rows.iter().zip(catalog.businesses()) {
                let above = scores.iter().filter(|&&s| s > row.e_mean).count();
                let below = scores.iter().filter(|&&s| s < row.e_mean).count();
                let he = above < m;
                let le = !he && below < m;
                if b.mean_rating >= 4.0 {
                    high_n += 1;
                    high_le += usize::from(le);
                } else {
                    low_n += 1;
                    low_he += usize::from(he);
                }
            }
            cells.push((
                scenario,
                100.0 * high_le as f64 / high_n as f64,
                100.0 * low_he as f64 / low_n as f64,
            ));
            maps.push((scenario, classes));
        }
        let pairs: Vec<(Scenario, &IndexMap<String, ExposureClass>)> = maps.iter().map(|(s, m)| (*s, m)).collect();
        let table = disparity_table(&ratings, &pairs).map_err(|e| e.to_string())?;
        for &(scenario, high_le, low_he) in &cells {
            let h = table.row(scenario, RatingClass::High).unwrap().le_pct.unwrap();
            let l = table.row(scenario, RatingClass::Low).unwrap().he_pct.unwrap();
            ensure(h == high_le && l == low_he, || format!("{scenario}: table ({h}, {l}) vs brute force ({high_le}, {low_he})"))?;
        }
        let mut buf = Vec::new();
        nearby_exposure::audit::write_disparity(&table, &mut buf).unwrap();
        Ok((cells, String::from_utf8(buf).unwrap()))
    };

    let (cells, first) = run(11)?;
    let (_, second) = run(11)?;
    ensure(first == second, || "hotspot run not deterministic".into())?;
    let (_, uni_high_le, uni_low_he) = cells[0];
    let (_, w_high_le, w_low_he) = cells[1];
    ensure(w_high_le > uni_high_le, || format!("(High,LE) weighted {w_high_le} <= uniform {uni_high_le}"))?;
    for (name, v) in [("uniform (High,LE)", uni_high_le), ("uniform (Low,HE)", uni_low_he), ("weighted (High,LE)", w_high_le), ("weighted (Low,HE)", w_low_he)] {
        ensure(v > 0.0, || format!("{name} is zero"))?;
    }
    within(start.elapsed(), 10.0)?;
    Ok(format!(
        "(High,LE) uniform {uni_high_le:.2}% -> weighted {w_high_le:.2}%; (Low,HE) {uni_low_he:.2}% / {w_low_he:.2}%"
    ))
}

fn blobs(n: usize, centers: usize, spread: f64, seed: u64) -> Vec<GeoPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hubs: Vec<(f64, f64)> = (0..centers)
        .map(|_| (rng.gen_range(40.5..41.0), rng.gen_range(-74.3..-73.7)))
        .collect();
    (0..n)
        .map(|_| {
            let (lat, lon) = hubs[rng.gen_range(0..centers)];
            GeoPoint::new(lat + rng.gen_range(-spread..spread), lon + rng.gen_range(-spread..spread)).unwrap()
        })
        .collect()
}

fn kmeans_properties() -> Result<String, String> {
    let points = blobs(1000, 12, 0.02, 5);
    let params = KMeansParams::new(10, 42);
    let start = Instant::now();
    let model = kmeans(&points, &params).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let again = kmeans(&points, &params).map_err(|e| e.to_string())?;
    within(elapsed, 1.0)?;
    ensure(model == again, || "repeated seeded runs differ".into())?;
    for pair in model.inertia_history.windows(2) {
        ensure(pair[1] <= pair[0], || format!("inertia rose {} -> {}", pair[0], pair[1]))?;
    }
    for (i, &p) in points.iter().enumerate() {
        let mut best = 0;
        for c in 1..model.centroids.len() {
            if haversine_distance(p, model.centroids[c]) < haversine_distance(p, model.centroids[best]) {
                best = c;
            }
        }
        ensure(model.assignment[i] == best, || format!("point {i} assigned {} not {best}", model.assignment[i]))?;
    }

    // full-scale performance
    let big = blobs(570_000, 400, 0.05, 6);
    let start = Instant::now();
    let large = kmeans(&big, &KMeansParams::new(1000, 1)).map_err(|e| e.to_string())?;
    let big_elapsed = start.elapsed();
    within(big_elapsed, 120.0)?;
    Ok(format!(
        "k=10: {} iterations in {:.3}s; k=1000 over 570k points: {} iterations in {:.1}s",
        model.iterations,
        elapsed.as_secs_f64(),
        large.iterations,
        big_elapsed.as_secs_f64()
    ))
}

fn percentile_classifier() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..1000 {
        let n = rng.gen_range(1..=500);
        // small integer range forces plenty of ties
        let levels = rng.gen_range(1..=50);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..levels)) / 7.0).collect();
        let c = classify_exposure(&scores).map_err(|e| e.to_string())?;

        let m = (0.25 * n as f64).ceil() as usize;
        let mut asc = scores.clone();
        asc.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut desc = scores.clone();
        desc.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let (p25, p75) = (asc[m - 1], desc[m - 1]);
        ensure(c.p25 == p25 && c.p75 == p75, || format!("case {case}: bounds ({}, {}) vs ({p25}, {p75})", c.p25, c.p75))?;
        for (&s, &class) in scores.iter().zip(&c.classes) {
            let want = if s >= p75 {
                ExposureClass::High
            } else if s <= p25 {
                ExposureClass::Low
            } else {
                ExposureClass::Mid
            };
            ensure(class == want, || format!("case {case}: score {s} classed {class:?}, want {want:?}"))?;
        }
    }
    let eight = classify_exposure(&(1..=8).map(f64::from).collect::<Vec<_>>()).unwrap();
    use ExposureClass::*;
    ensure(eight.classes == [Low, Low, Mid, Mid, Mid, Mid, High, High], || format!("1..8: {:?}", eight.classes))?;
    Ok("1000 vectors agree; 1..8 gives LE {1,2}, HE {7,8}".into())
}

fn end_to_end() -> Result<String, String> {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/minimal/config.json");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |dir: &Path| -> Result<(), String> {
        let status = Command::new(env!("CARGO_BIN_EXE_nearby-exposure"))
            .args(["audit", "--config"])
            .arg(&fixture)
            .arg("--out")
            .arg(dir)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.code() == Some(0), || {
            format!("exit {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr))
        })
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&a)?;
    run(&b)?;
    let mut names: Vec<String> = fs::read_dir(&a)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for required in OUTPUT_FILES {
        ensure(names.iter().any(|n| n == required), || format!("{required} missing"))?;
    }
    for name in &names {
        let (x, y) = (fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
        ensure(x == y, || format!("{name} differs between runs"))?;
    }
    let table = load_disparity(fs::File::open(a.join("disparity.csv")).unwrap()).map_err(|e| e.to_string())?;
    for r in &table.rows {
        if r.n > 0 {
            let sum = r.le_pct.unwrap() + r.he_pct.unwrap() + r.mid_pct.unwrap();
            ensure((sum - 100.0).abs() <= 0.01, || format!("{} {} row sums to {sum}", r.scenario, r.rating_class))?;
        }
    }
    Ok(format!("{} files byte-identical across runs, {} disparity rows", names.len(), table.rows.len()))
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("attention model", attention_model),
        ("fit round-trip", fit_round_trip),
        ("exposure oracle", exposure_oracle),
        ("meritocratic fixed point", meritocratic_fixed_point),
        ("distance monotonicity", distance_monotonicity),
        ("hotspot disparity", hotspot_disparity),
        ("k-means properties", kmeans_properties),
        ("percentile classifier", percentile_classifier),
        ("end-to-end smoke", end_to_end),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name} ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
