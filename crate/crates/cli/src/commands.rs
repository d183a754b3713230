use std::path::{Path, PathBuf};
use std::sync::Arc;

use ghostsim::analytic::{self, classify_regime, BinaryObject};
use ghostsim::calib::{fit_eta, CurveKind, CurvePoint, FitModel};
use ghostsim::estimators::{
    measure_nrf, measure_snr_values, reconstruct_moments, tiled_reconstruct, BucketLayout,
};
use ghostsim::io::{
    append_results, export_image, read_image_csv, read_mask_pgm, read_results, read_stack,
    write_csv_rows, write_mask_pgm, Image, ImageFormat, ResultRow, StackWriter,
};
use ghostsim::scene::{scene_stats, Layout, PixelMask, TransmissionMap};
use ghostsim::simulator::Simulation;
use ghostsim::statcore::derive_seed;
use ghostsim::{Error, KSource, Protocol, Result, SourceKind, SourceParams};
use rayon::prelude::*;
use serde::Serialize;

use crate::meta::{read_json, read_sidecar, sidecar_path, write_json, PgmLevels, ReconMeta, SimulationMeta};
use crate::{
    FitArgs, KSourceArg, NrfArgs, ReconstructArgs, SceneSpec, SimulateArgs, SnrArgs, SourceArgs, SweepArgs,
    VaryArg,
};

/// Frames sampled per write batch.
const WRITE_CHUNK: usize = 1024;

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

fn source_params(a: &SourceArgs) -> Result<SourceParams> {
    SourceParams::new(a.kind.into(), a.n2, a.modes, a.eta, a.delta_el)
}

fn simulation_meta(params: SourceParams, scene_text: &str, scene: &TransmissionMap, frames: usize, seed: u64) -> SimulationMeta {
    let st = scene_stats(scene);
    SimulationMeta {
        params,
        scene: scene_text.to_string(),
        width: scene.width(),
        height: scene.height(),
        frames,
        seed,
        t_bar: st.t_bar,
        t2_bar: st.t2_bar,
        epsilon: st.epsilon,
        t_plus: st.t_plus,
        t_minus: st.t_minus,
        regime: classify_regime(&params).to_string(),
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let params = source_params(&a.source)?;
    let spec: SceneSpec = a.scene.parse()?;
    let scene = spec.build()?;
    if a.frames == 0 {
        return Err(invalid("frame count must be >= 1"));
    }
    if a.out_probe == a.out_ref {
        return Err(invalid("probe and reference outputs must differ"));
    }
    let minus_mask = match &a.out_scene {
        Some(_) => Some(
            scene
                .level_masks()
                .ok_or_else(|| invalid("--out-scene needs a two-level scene"))?
                .1,
        ),
        None => None,
    };
    let sim = Simulation::new(params, &scene)?;
    let px = sim.pixels();

    let (w, h) = (scene.width(), scene.height());
    let mut probe_out = StackWriter::create(&a.out_probe, w, h, a.frames)?;
    let mut ref_out = StackWriter::create(&a.out_ref, w, h, a.frames)?;
    let mut start = 0;
    while start < a.frames {
        let n = WRITE_CHUNK.min(a.frames - start);
        let (p, r) = sim.sample_block(a.seed, start, n);
        for f in 0..n {
            probe_out.push_frame(&p[f * px..(f + 1) * px])?;
            ref_out.push_frame(&r[f * px..(f + 1) * px])?;
        }
        start += n;
    }
    probe_out.finish()?;
    ref_out.finish()?;

    if let (Some(path), Some(mask)) = (&a.out_scene, &minus_mask) {
        write_mask_pgm(path, mask)?;
    }
    let meta = simulation_meta(params, &a.scene, &scene, a.frames, a.seed);
    write_json(&sidecar_path(&a.out_probe), &meta)?;

    println!("grid      {w}x{h}, {} frames", a.frames);
    println!("t_bar     {:.6}", meta.t_bar);
    if let Some(eps) = meta.epsilon {
        println!("epsilon   {eps:.6}");
    }
    println!("regime    {}", meta.regime);
    Ok(())
}

fn parse_protocol(name: &str, k: Option<f64>) -> Result<Protocol> {
    let p = if name.eq_ignore_ascii_case("sk") {
        Protocol::Sk(k.ok_or_else(|| invalid("protocol sk needs --k"))?)
    } else {
        let p: Protocol = name.parse()?;
        if k.is_some() {
            return Err(invalid("--k only applies to protocol sk"));
        }
        p
    };
    if let Protocol::Sk(k) = p {
        if !k.is_finite() {
            return Err(invalid(format!("k must be finite, got {k}")));
        }
    }
    Ok(p)
}

fn parse_tiles(s: &str) -> Result<(usize, usize)> {
    let bad = || invalid(format!("tiles must look like RxC with positive counts, got `{s}`"));
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let r: usize = r.trim().parse().map_err(|_| bad())?;
    let c: usize = c.trim().parse().map_err(|_| bad())?;
    if r == 0 || c == 0 {
        return Err(bad());
    }
    Ok((r, c))
}

pub fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let protocol = parse_protocol(&a.protocol, a.k)?;
    let (rows, cols) = parse_tiles(&a.tiles)?;
    let sim_meta: Option<SimulationMeta> = match &a.params {
        Some(p) => Some(read_json(p)?),
        None => read_sidecar(&a.probe)?,
    };
    let source = match a.k_source {
        KSourceArg::Empirical => KSource::Empirical,
        KSourceArg::Analytic => {
            let m = sim_meta.as_ref().ok_or_else(|| {
                invalid("--k-source analytic needs --params or a sidecar next to the probe stack")
            })?;
            m.params.validate()?;
            KSource::Analytic(m.params)
        }
    };

    let probe = read_stack(&a.probe)?;
    let reference = read_stack(&a.reference)?;
    let recon = tiled_reconstruct(&probe, &reference, protocol, source, rows, cols)?;
    drop((probe, reference));

    let image = Image::new(recon.width(), recon.height(), recon.values().to_vec())?;
    let scale = export_image(&a.out, &image, ImageFormat::from_path(&a.out))?;
    let meta = ReconMeta {
        protocol: protocol.to_string(),
        k_source: match a.k_source {
            KSourceArg::Empirical => "empirical".into(),
            KSourceArg::Analytic => "analytic".into(),
        },
        k_used: recon.tile_k().to_vec(),
        tiles: [rows, cols],
        frames_used: recon.frames_used(),
        width: recon.width(),
        height: recon.height(),
        pgm: scale.map(|s| PgmLevels {
            offset: s.offset,
            scale: s.scale,
        }),
        simulation: sim_meta,
    };
    write_json(&sidecar_path(&a.out), &meta)?;

    println!("protocol  {protocol}");
    println!("frames    {}", recon.frames_used());
    if recon.tile_k().len() == 1 {
        println!("k         {:.6}", recon.k_used());
    } else {
        for (i, k) in recon.tile_k().iter().enumerate() {
            println!("k[{},{}]    {k:.6}", i / cols, i % cols);
        }
    }
    Ok(())
}

fn nan_row(protocol: String) -> ResultRow {
    ResultRow {
        protocol,
        eta: f64::NAN,
        n2: f64::NAN,
        modes: f64::NAN,
        delta_el: f64::NAN,
        n_pixels: 0,
        frames: 0,
        epsilon: f64::NAN,
        t_plus: f64::NAN,
        t_minus: f64::NAN,
        snr: f64::NAN,
        snr_err: f64::NAN,
    }
}

fn fill_from_simulation(row: &mut ResultRow, m: &SimulationMeta) {
    row.eta = m.params.eta;
    row.n2 = m.params.n2;
    row.modes = m.params.modes;
    row.delta_el = m.params.delta_el;
    row.n_pixels = m.width * m.height;
    row.frames = m.frames;
    row.epsilon = m.epsilon.unwrap_or(f64::NAN);
    row.t_plus = m.t_plus.unwrap_or(f64::NAN);
    row.t_minus = m.t_minus.unwrap_or(f64::NAN);
}

pub fn snr(a: &SnrArgs) -> Result<()> {
    if ImageFormat::from_path(&a.recon) == ImageFormat::Pgm16 {
        return Err(invalid(
            "PGM output is quantized; measure the SNR on the CSV reconstruction",
        ));
    }
    let image = read_image_csv(&a.recon)?;
    let (plus, minus) = match (&a.mask_plus, &a.mask_minus) {
        (Some(p), Some(m)) => (read_mask_pgm(p)?, read_mask_pgm(m)?),
        (Some(p), None) => {
            let p = read_mask_pgm(p)?;
            let m = p.complement();
            (p, m)
        }
        (None, Some(m)) => {
            let m = read_mask_pgm(m)?;
            (m.complement(), m)
        }
        (None, None) => return Err(invalid("give --mask-plus, --mask-minus or both")),
    };
    let report = measure_snr_values(image.width, image.height, &image.values, &plus, &minus)?;

    println!("snr       {:.6}", report.snr);
    println!("plus      mean {:.6}  var {:.6}  ({} px)", report.mean_plus, report.var_plus, report.n_plus);
    println!("minus     mean {:.6}  var {:.6}  ({} px)", report.mean_minus, report.var_minus, report.n_minus);
    if report.degenerate {
        eprintln!("warning: both regions are constant; the SNR is not meaningful");
    }

    if let Some(results) = &a.results {
        let recon_meta: Option<ReconMeta> = read_sidecar(&a.recon)?;
        let mut row = nan_row(
            recon_meta
                .as_ref()
                .map_or_else(|| "unknown".to_string(), |m| m.protocol.clone()),
        );
        row.n_pixels = image.width * image.height;
        row.epsilon = report.n_minus as f64 / (report.n_plus + report.n_minus) as f64;
        if let Some(m) = &recon_meta {
            if let Some(s) = &m.simulation {
                fill_from_simulation(&mut row, s);
            }
            row.frames = m.frames_used;
        }
        row.snr = report.snr;
        append_results(results, &[row])?;
    }
    Ok(())
}

pub fn nrf(a: &NrfArgs) -> Result<()> {
    let probe = read_stack(&a.probe)?;
    let reference = read_stack(&a.reference)?;
    let region = match &a.region {
        Some(p) => read_mask_pgm(p)?,
        None => PixelMask::full(probe.width(), probe.height()),
    };
    let report = measure_nrf(&probe, &reference, &region)?;
    println!("nrf       {:.6} +- {:.6}  ({} pairs)", report.nrf, report.std_error, report.pairs);
    println!(
        "verdict   {}",
        if report.is_non_classical() {
            "sub-shot-noise correlation"
        } else {
            "consistent with classical light"
        }
    );
    if let Some(results) = &a.results {
        let mut row = nan_row("nrf".into());
        if let Some(m) = read_sidecar::<SimulationMeta>(&a.probe)? {
            fill_from_simulation(&mut row, &m);
        }
        row.n_pixels = report.pairs;
        row.frames = probe.frames();
        row.snr = report.nrf;
        row.snr_err = report.std_error;
        append_results(results, &[row])?;
    }
    Ok(())
}

fn parse_range(s: &str) -> Result<Vec<f64>> {
    let bad = || invalid(format!("range must look like start:stop:count, got `{s}`"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    Ok((0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect())
}

fn parse_layout(s: &str) -> Result<Layout> {
    match s {
        "left" => Ok(Layout::LeftBlock),
        "rect" => Ok(Layout::Rectangle),
        other => Err(invalid(format!("unknown layout `{other}` (left or rect)"))),
    }
}

struct GridPoint {
    x: f64,
    params: SourceParams,
    scene: TransmissionMap,
    plus: PixelMask,
    minus: PixelMask,
}

#[derive(Serialize)]
struct TheoryRow {
    vary: &'static str,
    x: f64,
    protocol: String,
    eta: f64,
    epsilon: f64,
    t_plus: f64,
    t_minus: f64,
    snr_model: f64,
    regime: String,
}

const THEORY_COLUMNS: [&str; 9] = [
    "vary", "x", "protocol", "eta", "epsilon", "t_plus", "t_minus", "snr_model", "regime",
];

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn default_theory_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "sweep".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.theory.csv"))
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let base = source_params(&a.source)?;
    let layout = parse_layout(&a.layout)?;
    let xs = parse_range(&a.range)?;
    let protocols = a
        .protocols
        .iter()
        .map(|p| p.trim().parse::<Protocol>())
        .collect::<Result<Vec<_>>>()?;
    if protocols.is_empty() {
        return Err(invalid("no protocols given"));
    }
    if a.frames < 2 {
        return Err(invalid("a sweep needs at least 2 frames per run"));
    }
    if a.seeds == 0 {
        return Err(invalid("seed count must be >= 1"));
    }

    // build and check every grid point before simulating anything
    let points = xs
        .iter()
        .map(|&x| {
            let (mut eps, mut tminus, mut params) = (a.eps, a.tminus, base);
            match a.vary {
                VaryArg::Epsilon => eps = x,
                VaryArg::Tminus => tminus = x,
                VaryArg::Eta => params = base.with_eta(x)?,
            }
            let scene = ghostsim::make_binary_scene(a.width, a.height, eps, a.tplus, tminus, layout)?;
            let (plus, minus) = scene
                .level_masks()
                .ok_or_else(|| invalid("sweep scenes must have two levels"))?;
            for (name, m) in [("plus", &plus), ("minus", &minus)] {
                if m.count() < 2 {
                    return Err(Error::RegionTooSmall {
                        name,
                        size: m.count(),
                        needed: 2,
                    });
                }
            }
            Ok(GridPoint {
                x,
                params,
                scene,
                plus,
                minus,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let bucket = Arc::new(BucketLayout::single(a.width, a.height));
    let measured = points
        .par_iter()
        .enumerate()
        .map(|(i, pt)| {
            let sim = Simulation::new(pt.params, &pt.scene)?;
            let point_seed = derive_seed(a.seed, i as u64);
            let mut per_protocol = vec![Vec::with_capacity(a.seeds); protocols.len()];
            for s in 0..a.seeds {
                let m = sim.moments(a.frames, derive_seed(point_seed, s as u64), bucket.clone())?;
                for (j, &p) in protocols.iter().enumerate() {
                    let recon = reconstruct_moments(&m, p, KSource::Empirical)?;
                    let r = measure_snr_values(a.width, a.height, recon.values(), &pt.plus, &pt.minus)?;
                    per_protocol[j].push(r.snr);
                }
            }
            Ok(per_protocol)
        })
        .collect::<Result<Vec<_>>>()?;

    let cells = (a.width * a.height) as f64;
    let mut rows = Vec::new();
    let mut theory = Vec::new();
    let vary_name = match a.vary {
        VaryArg::Epsilon => "epsilon",
        VaryArg::Tminus => "t_minus",
        VaryArg::Eta => "eta",
    };
    for (pt, per_protocol) in points.iter().zip(&measured) {
        let st = scene_stats(&pt.scene);
        let epsilon = st.epsilon.unwrap_or(f64::NAN);
        let t_minus = st.t_minus.unwrap_or(f64::NAN);
        let object = BinaryObject::new(epsilon, a.tplus, t_minus);
        for (&p, snrs) in protocols.iter().zip(per_protocol) {
            let (snr, snr_err) = mean_and_se(snrs);
            rows.push(ResultRow {
                protocol: p.to_string(),
                eta: pt.params.eta,
                n2: pt.params.n2,
                modes: pt.params.modes,
                delta_el: pt.params.delta_el,
                n_pixels: a.width * a.height,
                frames: a.frames,
                epsilon,
                t_plus: a.tplus,
                t_minus,
                snr,
                snr_err,
            });
            theory.push(TheoryRow {
                vary: vary_name,
                x: pt.x,
                protocol: p.to_string(),
                eta: pt.params.eta,
                epsilon,
                t_plus: a.tplus,
                t_minus,
                snr_model: analytic::snr(&pt.params, &object, cells, a.frames as f64, p)?,
                regime: classify_regime(&pt.params).to_string(),
            });
        }
    }
    ghostsim::io::write_results(&a.out, &rows)?;
    let theory_path = a.theory.clone().unwrap_or_else(|| default_theory_path(&a.out));
    write_csv_rows(&theory_path, &THEORY_COLUMNS, &theory)?;

    println!("{} grid points x {} protocols x {} seeds", points.len(), protocols.len(), a.seeds);
    println!("results   {}", a.out.display());
    println!("theory    {}", theory_path.display());
    Ok(())
}

const FIX_NAMES: [&str; 8] = ["n2", "M", "delta_el", "N_pixels", "H", "epsilon", "t_plus", "t_minus"];

fn column(row: &ResultRow, name: &str) -> f64 {
    match name {
        "n2" => row.n2,
        "M" => row.modes,
        "delta_el" => row.delta_el,
        "N_pixels" => row.n_pixels as f64,
        "H" => row.frames as f64,
        "epsilon" => row.epsilon,
        "t_plus" => row.t_plus,
        "t_minus" => row.t_minus,
        _ => unreachable!("unknown column {name}"),
    }
}

/// A parameter held during the fit: an override or the value shared by all rows.
fn held(rows: &[ResultRow], overrides: &[(String, f64)], name: &str) -> Result<f64> {
    if let Some((_, v)) = overrides.iter().find(|(n, _)| n == name) {
        return Ok(*v);
    }
    let first = column(&rows[0], name);
    let same = rows.iter().all(|r| {
        let v = column(r, name);
        v == first || (v - first).abs() <= 1e-9 * first.abs().max(v.abs())
    });
    if !same || !first.is_finite() {
        return Err(invalid(format!(
            "rows do not share one finite value of {name}; pass --fix {name}=VALUE"
        )));
    }
    Ok(first)
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let curve: CurveKind = a.curve.parse()?;
    let protocol: Protocol = a.protocol.parse()?;
    let mut overrides = Vec::new();
    for f in a.fix.iter().map(|f| f.trim()).filter(|f| !f.is_empty()) {
        let (name, value) = match f.split_once('=') {
            Some((n, v)) => (n.trim(), Some(v.trim())),
            None => (f, None),
        };
        // short form used in the usage text
        let name = if name == "N" { "N_pixels" } else { name };
        if !FIX_NAMES.contains(&name) {
            return Err(invalid(format!(
                "cannot fix `{name}`; choose from {}",
                FIX_NAMES.join(", ")
            )));
        }
        if let Some(v) = value {
            let v: f64 = v
                .parse()
                .map_err(|_| invalid(format!("--fix {name} needs a number, got `{v}`")))?;
            overrides.push((name.to_string(), v));
        }
    }

    let all = read_results(&a.data)?;
    let wanted = protocol.to_string();
    let rows: Vec<ResultRow> = all
        .into_iter()
        .filter(|r| r.protocol.parse::<Protocol>().is_ok_and(|p| p.to_string() == wanted))
        .collect();
    if rows.len() < 3 {
        return Err(invalid(format!(
            "{} rows with protocol {wanted} in {}; a fit needs at least 3",
            rows.len(),
            a.data.display()
        )));
    }
    let x_name = match curve {
        CurveKind::SnrVsEps => "epsilon",
        CurveKind::SnrVsTminus => "t_minus",
    };
    let other = |n: &str| -> Result<f64> {
        if n == x_name {
            Ok(f64::NAN)
        } else {
            held(&rows, &overrides, n)
        }
    };
    let model = FitModel {
        kind: SourceKind::from(a.kind),
        n2: other("n2")?,
        modes: other("M")?,
        delta_el: other("delta_el")?,
        n_pixels: other("N_pixels")?,
        frames: other("H")?,
        protocol,
        epsilon: other("epsilon")?,
        t_plus: other("t_plus")?,
        t_minus: other("t_minus")?,
    };
    let points = rows
        .iter()
        .map(|r| {
            if !(r.snr_err > 0.0 && r.snr_err.is_finite()) {
                return Err(invalid(format!(
                    "row at {x_name} = {} has no usable snr_err; the fit weights need one",
                    column(r, x_name)
                )));
            }
            Ok(CurvePoint {
                x: column(r, x_name),
                snr: r.snr,
                sigma: r.snr_err,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let result = fit_eta(&points, curve, &model)?;
    println!("eta       {:.5} +- {:.5}", result.eta_hat, result.std_error);
    println!("chi2      {:.4} ({} points, {} iterations)", result.residual_sum, points.len(), result.iterations);
    if result.at_boundary {
        eprintln!("warning: the optimum lies on the edge of the allowed range; the error is unreliable");
    }
    if let Some(band) = &a.band {
        write_csv_rows(band, &["x", "snr_model", "lower_1sigma", "upper_1sigma"], &result.band)?;
        println!("band      {}", band.display());
    }
    Ok(())
}
