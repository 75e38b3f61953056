//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any failed. Criteria 5, 8 and 10 run the desk pipeline
//! twice through the binary, which takes a while on one core.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use crushgraph::attribution::attribute;
use crushgraph::dataset::{parse_shape, TABLE_DIAMETERS, TABLE_SHAPES};
use crushgraph::features::{pmd_names, PMD_LEN};
use crushgraph::geometry::{convex_hull, measure, EllipsoidSpec, Plane, Vec3};
use crushgraph::graphset::{FragmentGraph, EDGE_DIM, GRAPH_DIM, GRAPH_SCHEMA, NODE_DIM};
use crushgraph::learn::{
    evaluate, loss_and_grad, train, Ablation, Activation, GraphInput, Model, ModelConfig, ParamStore, Readout,
};
use crushgraph::simulator::{pull_bond, Axis, CzmParams};
use crushgraph::tessellation::{seed_count, tessellate};
use crushgraph::weibull::fit;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Weibull};
use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_crushgraph");

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_particle(rng: &mut ChaCha8Rng) -> EllipsoidSpec {
    let d = TABLE_DIAMETERS[rng.random_range(0..TABLE_DIAMETERS.len())];
    let shape = parse_shape(TABLE_SHAPES[rng.random_range(0..TABLE_SHAPES.len())]).unwrap();
    EllipsoidSpec::new(d, shape)
}

fn geometry() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_clip = 0.0f64;
    let mut worst_scale = 0.0f64;
    for _ in 0..200 {
        let pts: Vec<Vec3> = (0..30)
            .map(|_| Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)))
            .collect();
        let poly = convex_hull(&pts).unwrap();
        let n = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if n.norm() < 1e-3 {
            continue;
        }
        let plane = Plane::new(n, rng.random_range(-1.0..1.0));
        let whole = measure(&poly).volume;
        let a = poly.clip(&plane).map_or(0.0, |p| measure(&p).volume);
        let b = poly.clip(&plane.flipped()).map_or(0.0, |p| measure(&p).volume);
        worst_clip = worst_clip.max(((a + b) / whole - 1.0).abs());
        let s = rng.random_range(0.1..10.0);
        let (m, k) = (measure(&poly), measure(&poly.scaled(s)));
        worst_scale = worst_scale
            .max((k.volume / (m.volume * s.powi(3)) - 1.0).abs())
            .max((k.surface_area / (m.surface_area * s * s) - 1.0).abs());
    }
    ensure(worst_clip < 1e-9, format!("clip halves off by {worst_clip:.1e}"))?;
    ensure(worst_scale < 1e-9, format!("scaling laws off by {worst_scale:.1e}"))?;

    let (mut agree, mut total) = (0, 0);
    for k in 0..20 {
        let spec = random_particle(&mut rng);
        let mesh = tessellate(&spec, 500 + k, None).map_err(|e| e.to_string())?;
        let a = spec.semi_axes();
        let mut hits = 0;
        while hits < 100 {
            let p = Vec3::new(rng.random_range(-a.x..a.x), rng.random_range(-a.y..a.y), rng.random_range(-a.z..a.z));
            if !mesh.particle_poly.contains(&p, -1e-9) {
                continue;
            }
            hits += 1;
            total += 1;
            let owner = (0..mesh.seeds.len())
                .min_by(|&i, &j| (p - mesh.seeds[i]).norm().total_cmp(&(p - mesh.seeds[j]).norm()))
                .unwrap();
            if mesh.cells[owner].contains(&p, 1e-9 * spec.diameter) && mesh.nearest_seed(&p) == owner {
                agree += 1;
            }
        }
    }
    ensure(agree == total, format!("nearest seed agreement {agree}/{total}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "clip err {worst_clip:.1e} < 1e-9, scale err {worst_scale:.1e} < 1e-9, nearest seed {agree}/{total}, {secs:.1} s < 60 s"
    ))
}

fn partition() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let spec = random_particle(&mut rng);
        let mesh = tessellate(&spec, 9000 + k, None).map_err(|e| e.to_string())?;
        let total: f64 = mesh.cells.iter().map(|c| measure(c).volume).sum();
        worst = worst.max((total / measure(&mesh.particle_poly).volume - 1.0).abs());
    }
    ensure(worst <= 1e-6, format!("volume mismatch {worst:.1e}"))?;
    let small = tessellate(&EllipsoidSpec::new(11.86, [1.0; 3]), 3, None).map_err(|e| e.to_string())?;
    let large = tessellate(&EllipsoidSpec::new(35.57, [1.0; 3]), 3, None).map_err(|e| e.to_string())?;
    let counts = (small.n_cells(), large.n_cells(), seed_count(11.86), seed_count(35.57));
    ensure(counts == (8, 216, 8, 216), format!("cell counts {counts:?}"))?;
    Ok(format!("volume err {worst:.1e} <= 1e-6 over 50 particles, cells 8 at d=11.86 and 216 at d=35.57"))
}

fn single_bond() -> Check {
    let czm = CzmParams::default();
    let area = 1.7;
    let pull = pull_bond(area, &czm, 20_000).map_err(|e| e.to_string())?;
    let peak = pull.force.iter().copied().fold(0.0, f64::max);
    let expected_peak = czm.sigma_i * area;
    let g = czm.g_i * 1e-3 * area;
    let mut area_under = 0.0;
    for k in 1..pull.opening.len() {
        area_under += 0.5 * (pull.force[k] + pull.force[k - 1]) * (pull.opening[k] - pull.opening[k - 1]);
    }
    let (e_peak, e_diss, e_work) =
        ((peak / expected_peak - 1.0).abs(), (pull.dissipated / g - 1.0).abs(), (area_under / g - 1.0).abs());
    ensure(e_peak <= 5e-3, format!("peak {peak} vs {expected_peak}"))?;
    ensure(e_diss <= 0.02 && e_work <= 0.02, format!("dissipated {} / work {area_under} vs {g}", pull.dissipated))?;
    Ok(format!(
        "peak err {:.3}% <= 0.5%, dissipated err {:.3}% <= 2%, curve area err {:.3}%",
        100.0 * e_peak,
        100.0 * e_diss,
        100.0 * e_work
    ))
}

fn weibull() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dist = Weibull::new(10.0, 9.690).unwrap();
    let sample: Vec<f64> = (0..1000).map(|_| dist.sample(&mut rng)).collect();
    let f = fit(&sample).map_err(|e| e.to_string())?;
    let (em, es) = ((f.m / 9.690 - 1.0).abs(), (f.sigma0 / 10.0 - 1.0).abs());
    let ps = f.survival(f.sigma0);
    let es0 = (ps - (-1.0f64).exp()).abs();
    ensure(em <= 0.05 && es <= 0.02, format!("m = {}, sigma0 = {}", f.m, f.sigma0))?;
    ensure(es0 <= 1e-12, format!("Ps(sigma0) = {ps}"))?;
    Ok(format!(
        "m = {:.3} ({:.2}% <= 5%), sigma0 = {:.4} ({:.2}% <= 2%), |Ps(sigma0) - 1/e| = {es0:.1e} <= 1e-12",
        f.m,
        100.0 * em,
        f.sigma0,
        100.0 * es
    ))
}

fn toy_graph(n: usize, rng: &mut ChaCha8Rng) -> GraphInput {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    if n > 3 {
        edges.push((0, n - 1));
    }
    GraphInput {
        graph: DVector::from_fn(GRAPH_DIM, |_, _| rng.random_range(-1.0..1.0)),
        nodes: DMatrix::from_fn(n, NODE_DIM, |_, _| rng.random_range(-1.0..1.0)),
        edge_features: DMatrix::from_fn(edges.len(), EDGE_DIM, |_, _| rng.random_range(-1.0..1.0)),
        edges,
        label: rng.random_range(5.0..15.0),
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-10 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn gradients() -> Check {
    let start = Instant::now();
    let mut configs = Vec::new();
    for a in Ablation::ALL {
        for r in [Readout::Mean, Readout::Sum, Readout::Max] {
            configs.push(
                ModelConfig { hidden: 5, n_layers: 2, dropout: 0.0, eps: 0.1, readout: r, lambda: 1e-3, ..ModelConfig::default() }
                    .with_ablation(a),
            );
        }
    }
    configs.push(ModelConfig { use_gnn: false, ..configs[0].clone() });
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let batch: Vec<GraphInput> = (0..3).map(|k| toy_graph(3 + 2 * k, &mut rng)).collect();
    let refs: Vec<&GraphInput> = batch.iter().collect();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (v, config) in configs.iter().enumerate() {
        // off the ReLU kinks that zero biases sit on
        let mut params = ParamStore::init(&ModelConfig { seed: v as u64, ..config.clone() }, 1.0);
        for t in &mut params.tensors {
            t.apply(|x| *x += rng.random_range(-0.2..0.2));
        }
        let (_, grads) = loss_and_grad(config, &params, &refs, None).map_err(|e| e.to_string())?;
        for t in 0..params.tensors.len() {
            let mut fd = Vec::new();
            for k in 0..params.tensors[t].len() {
                let orig = params.tensors[t][k];
                params.tensors[t][k] = orig + h;
                let up = loss_and_grad(config, &params, &refs, None).unwrap().0;
                params.tensors[t][k] = orig - h;
                let down = loss_and_grad(config, &params, &refs, None).unwrap().0;
                params.tensors[t][k] = orig;
                fd.push((up - down) / (2.0 * h));
            }
            let e = rel_err(&fd, grads[t].as_slice());
            ensure(e <= 1e-4, format!("variant {v} {}: {e:.1e}", params.names[t]))?;
            worst = worst.max(e);
        }
        let model = Model::new(config, &params);
        let x = &batch[2];
        let g = model.input_gradient(x).map_err(|e| e.to_string())?;
        let mut probe = x.clone();
        let mut fd = Vec::new();
        let mut analytic = Vec::new();
        for k in 0..GRAPH_DIM {
            probe.graph[k] += h;
            let up = model.predict(&probe).unwrap();
            probe.graph[k] -= 2.0 * h;
            let down = model.predict(&probe).unwrap();
            probe.graph[k] += h;
            fd.push((up - down) / (2.0 * h));
            analytic.push(g.graph[k]);
        }
        for k in 0..probe.nodes.len() {
            probe.nodes[k] += h;
            let up = model.predict(&probe).unwrap();
            probe.nodes[k] -= 2.0 * h;
            let down = model.predict(&probe).unwrap();
            probe.nodes[k] += h;
            fd.push((up - down) / (2.0 * h));
            analytic.push(g.nodes[k]);
        }
        for k in 0..probe.edge_features.len() {
            probe.edge_features[k] += h;
            let up = model.predict(&probe).unwrap();
            probe.edge_features[k] -= 2.0 * h;
            let down = model.predict(&probe).unwrap();
            probe.edge_features[k] += h;
            fd.push((up - down) / (2.0 * h));
            analytic.push(g.edge_features[k]);
        }
        let e = rel_err(&fd, &analytic);
        ensure(e <= 1e-4, format!("variant {v} input gradient: {e:.1e}"))?;
        worst = worst.max(e);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 300.0, format!("took {secs:.0} s"))?;
    Ok(format!("worst relative error {worst:.1e} <= 1e-4 over {} variants, {secs:.1} s < 300 s", configs.len()))
}

fn overfit() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let data: Vec<GraphInput> = (0..16).map(|k| toy_graph(4 + k % 5, &mut rng)).collect();
    let config = ModelConfig {
        hidden: 32,
        dropout: 0.0,
        learning_rate: 3e-3,
        batch_size: 16,
        max_epochs: 2000,
        patience: 2000,
        ..ModelConfig::default()
    };
    let a = train(&data, &data, &config).map_err(|e| e.to_string())?;
    let mae = evaluate(&config, &a.params, &data).map_err(|e| e.to_string())?.mae;
    ensure(mae < 0.05, format!("train MAE {mae} after {} epochs", a.history.len()))?;
    let b = train(&data, &data, &config).map_err(|e| e.to_string())?;
    let same = a.history.len() == b.history.len()
        && a.history.iter().zip(&b.history).all(|(x, y)| {
            x.train_loss.to_bits() == y.train_loss.to_bits() && x.val_mae.to_bits() == y.val_mae.to_bits()
        })
        && a.params == b.params;
    ensure(same, "repeated training diverged")?;
    Ok(format!("MAE {mae:.4} < 0.05 within {} epochs, repeat run bitwise identical", a.history.len()))
}

fn linear_attribution() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let graphs: Vec<FragmentGraph> = (0..6)
        .map(|k| {
            let n = 3 + k % 3;
            FragmentGraph {
                schema: GRAPH_SCHEMA.into(),
                particle_id: format!("p{k}"),
                type_id: format!("t{}", k / 2),
                diameter: 11.86,
                shape: "1,1,1".into(),
                axis: Axis::Z,
                nodes: (0..n).map(|_| (0..NODE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
                edges: (1..n).map(|j| (j - 1, j)).collect(),
                edge_features: (1..n).map(|_| (0..EDGE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
                graph: (0..GRAPH_DIM).map(|_| rng.random_range(-1.0..1.0)).collect(),
                label: 10.0 + k as f64,
            }
        })
        .collect();
    let config = ModelConfig {
        hidden: 1,
        n_layers: 1,
        activation: Activation::Linear,
        use_gnn: false,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let mut p = ParamStore::init(&config, 3.0);
    p.get_mut("mlp.head.w")[(0, 0)] = 1.0;
    let w = p.get("mlp.0.w").clone();
    let (pmd, _) = attribute(&config, &p, &graphs).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for row in &pmd.rows {
        for k in 0..PMD_LEN {
            worst = worst.max((row.values[k] - w[(0, k)].abs()).abs());
        }
    }
    ensure(worst <= 1e-12, format!("|attribution - |w|| = {worst:.1e}"))?;

    let csv = pmd.to_csv().map_err(|e| e.to_string())?;
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let feature_cols = header.iter().filter(|c| pmd_names().iter().any(|n| n == *c)).count();
    ensure(feature_cols == 35, format!("csv has {feature_cols} feature columns"))?;
    let svg = pmd.heatmap_svg("linear", &["centroid_offset"]);
    let shown = heatmap_features(&svg)?;
    ensure(shown.len() == 34 && !shown.iter().any(|c| c == "centroid_offset"), format!("heatmap shows {} features", shown.len()))?;
    Ok(format!("max | attribution - |w| | = {worst:.1e} <= 1e-12, CSV 35 feature columns, heatmap 34 without centroid_offset"))
}

/// Distinct feature rows drawn in an attribution heatmap.
fn heatmap_features(svg: &str) -> Result<Vec<String>, String> {
    let doc = roxmltree::Document::parse(svg).map_err(|e| e.to_string())?;
    let mut out: Vec<String> = Vec::new();
    for n in doc.descendants().filter(|n| n.has_tag_name("rect")) {
        if let Some(f) = n.attribute("data-feature") {
            if !out.iter().any(|c| c == f) {
                out.push(f.to_string());
            }
        }
    }
    Ok(out)
}

const PIPELINE: [&[&str]; 11] = [
    &["gen"],
    &["simulate"],
    &["fit-weibull"],
    &["features"],
    &["graphs"],
    &["split"],
    &["ablate"],
    &["attribute"],
    &["--ablation", "no-pmd", "attribute"],
    &["stats"],
    &["plot"],
];

fn desk_run(out: &Path, workers: usize) -> Result<(), String> {
    for args in PIPELINE {
        let start = Instant::now();
        let o = Command::new(BIN)
            .env_remove("CRUSHGRAPH_CONFIG")
            .args(["--config", "desk", "--workers", &workers.to_string(), "--out"])
            .arg(out)
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
        eprintln!("  desk {args:?} in {:.0} s", start.elapsed().as_secs_f64());
    }
    Ok(())
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|x| x.map(|x| x.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    Ok((header, rows))
}

fn size_effect(run: &Path) -> Check {
    let (header, rows) = read_csv(&run.join("weibull.csv"))?;
    let col = |name: &str| header.iter().position(|h| h == name).ok_or(format!("no {name} column"));
    let (d, s, a) = (col("diameter")?, col("sigma0")?, col("axis")?);
    let z: Vec<&Vec<String>> = rows.iter().filter(|r| r[a] == "Z").collect();
    ensure(z.len() == 10, format!("{} fitted Z types, expected 10", z.len()))?;
    let diam: Vec<f64> = z.iter().map(|r| r[d].parse().unwrap()).collect();
    let sigma: Vec<f64> = z.iter().map(|r| r[s].parse().unwrap()).collect();
    let rho = spearman(&diam, &sigma);
    let detail = format!(
        "Spearman(diameter, sigma0) = {rho:.3} over {} Z-axis types, must be < 0; sigma0 = [{}]",
        z.len(),
        sigma.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(", ")
    );
    if rho < 0.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ablation_outputs(run: &Path) -> Check {
    for task in ["diameter", "shape", "axis"] {
        let (_, rows) = read_csv(&run.join(format!("ablation_{task}.csv")))?;
        let variants: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
        ensure(variants == ["baseline", "no-pmd", "no-nef"], format!("{task}: variants {variants:?}"))?;
    }
    let mut cells = 0;
    for task in ["diameter", "shape", "axis"] {
        let (header, rows) = read_csv(&run.join(format!("attribution_{task}_no-pmd_pmd.csv")))?;
        let cols: Vec<usize> =
            (0..header.len()).filter(|&c| pmd_names().iter().any(|n| *n == header[c])).collect();
        ensure(cols.len() == PMD_LEN, format!("{task}: {} PMD columns", cols.len()))?;
        for r in &rows {
            for &c in &cols {
                cells += 1;
                ensure(r[c].parse::<f64>().unwrap() == 0.0, format!("{task}: {} = {}", header[c], r[c]))?;
            }
        }
    }
    Ok(format!("3 rows per task, no-PMD attribution exactly 0 in all {cells} cells"))
}

fn manifest_entries(run: &Path) -> Result<Vec<serde_json::Value>, String> {
    std::fs::read_to_string(run.join("manifest.jsonl"))
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect()
}

fn replay(a: &Path, b: &Path) -> Check {
    let (ma, mb) = (manifest_entries(a)?, manifest_entries(b)?);
    ensure(ma.len() == PIPELINE.len(), format!("{} manifest entries", ma.len()))?;
    ensure(ma == mb, "manifests differ")?;
    let mut files = 0;
    for e in &ma {
        for o in e["outputs"].as_array().unwrap() {
            let rel = o["path"].as_str().unwrap();
            let (x, y) = (std::fs::read(a.join(rel)).map_err(|e| e.to_string())?, std::fs::read(b.join(rel)).map_err(|e| e.to_string())?);
            let digest = format!("{:x}", Sha256::digest(&x));
            ensure(digest == o["sha256"].as_str().unwrap(), format!("{rel} does not match its manifest hash"))?;
            ensure(x == y, format!("{rel} differs between runs"))?;
            files += 1;
        }
    }
    Ok(format!("{} manifest entries and {files} output hashes identical across runs", ma.len()))
}

fn main() {
    let mut results: Vec<(u32, &str, Result<String, String>)> = Vec::new();
    let mut record = |n: u32, name: &'static str, f: &dyn Fn() -> Check| {
        let start = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let (tag, msg) = match &r {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        println!("acceptance {n:>2} {tag} {name}: {msg} [{:.0} s]", start.elapsed().as_secs_f64());
        results.push((n, name, r));
    };
    record(1, "geometry", &geometry);
    record(2, "partition", &partition);
    record(3, "single bond", &single_bond);
    record(4, "weibull recovery", &weibull);
    record(6, "finite-difference gradients", &gradients);
    record(7, "overfit and reproducibility", &overfit);
    record(9, "linear attribution and exports", &linear_attribution);

    let dir = tempfile::tempdir().expect("temp dir");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).max(2);
    eprintln!("running the desk pipeline twice (workers 1 and {workers})");
    let runs = desk_run(&a, 1).and_then(|_| desk_run(&b, workers));
    match runs {
        Ok(()) => {
            record(5, "size effect on desk data", &|| size_effect(&a));
            record(8, "ablation outputs", &|| ablation_outputs(&a));
            record(10, "desk replay", &|| replay(&a, &b));
        }
        Err(e) => {
            for (n, name) in [(5, "size effect on desk data"), (8, "ablation outputs"), (10, "desk replay")] {
                record(n, name, &|| Err(format!("desk pipeline failed: {e}")));
            }
        }
    }

    results.sort_by_key(|r| r.0);
    println!("\nacceptance summary");
    for (n, name, r) in &results {
        println!("  {n:>2} {} {name}", if r.is_ok() { "PASS" } else { "FAIL" });
    }
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
