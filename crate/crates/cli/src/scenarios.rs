//! One runner per scenario kind. Each writes its outputs through [`OutputDir`].

use crate::config::*;
use crate::output::OutputDir;
use crate::{invalid, CliError};
use photonq::ghostid::{self, ObjectSet};
use photonq::io::{self, fmt_f64, GrayImage};
use photonq::modes::{self, OamSpectrum};
use photonq::qkd::{self, ImagingAttack, ImagingVerdict, ProtocolConfig, Reflectivity, Source};
use photonq::sorter::{self, CrosstalkMatrix, SortBasis};
use photonq::weakmeas::{self, DirectMeasConfig};
use photonq::{ComplexField, GridSpec};
use serde_json::json;
use std::fs;
use std::path::Path;

/// Relative tolerance on power conservation through lossless optics.
const POWER_TOL: f64 = 1e-8;

pub(crate) fn run(cfg: &ScenarioConfig, out: &mut OutputDir) -> Result<(), CliError> {
    match &cfg.params {
        Params::Modes(p) => run_modes(p, out),
        Params::Sorter(p) => run_sorter(p, out),
        Params::Qkd(p) => run_qkd(p, cfg.seed, out),
        Params::Secimg(p) => run_secimg(p, cfg.seed, out),
        Params::Weak(p) => run_weak(p, cfg.seed, out),
        Params::Ghost(p) => run_ghost(p, cfg.seed, out),
    }
}

fn check_power(what: &str, expected: f64, got: f64) -> Result<(), CliError> {
    if !got.is_finite() || (got - expected).abs() > POWER_TOL * expected.max(1e-300) {
        return Err(CliError::Numerical(format!("{what}: power {got:.12e}, expected {expected:.12e}")));
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_pgm(path: &Path) -> Result<GrayImage, CliError> {
    GrayImage::from_pgm(&read_file(path)?).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn spectrum_csv(spec: &OamSpectrum) -> String {
    let mut s = String::from("ell,re,im,prob,phase\n");
    for (l, a) in spec.iter() {
        s.push_str(&format!("{l},{},{},{},{}\n", fmt_f64(a.re), fmt_f64(a.im), fmt_f64(a.norm_sqr()), fmt_f64(a.arg())));
    }
    s
}

// ---------------------------------------------------------------------------

fn run_modes(p: &ModesParams, out: &mut OutputDir) -> Result<(), CliError> {
    let g = p.grid;
    if p.family == ModeFamily::Hologram {
        let mask = modes::forked_hologram(p.ell, p.period, &g).map_err(invalid)?;
        out.write("hologram.pgm", &io::wrapped_phase_image(g.nx(), g.ny(), mask.phase()).to_pgm())?;
        let mut csv = String::from("x,y,phase\n");
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                csv.push_str(&format!("{},{},{}\n", fmt_f64(g.x(i)), fmt_f64(g.y(j)), fmt_f64(mask.at(i, j))));
            }
        }
        out.write("hologram.csv", csv.as_bytes())?;
        let radius_px = (g.nx().min(g.ny()) / 8) as f64;
        let forks = modes::fork_dislocations(&mask, radius_px);
        return out.write_json("summary.json", &json!({ "family": p.family, "ell": p.ell, "period": p.period, "dislocations": forks }));
    }
    let field: ComplexField = match p.family {
        ModeFamily::Lg => modes::lg_mode(p.ell, &p.beam, p.z, &g),
        ModeFamily::Vortex => modes::vortex_mode(p.ell, p.beam.aperture, &g),
        ModeFamily::Ang => modes::ang_mode(p.n, p.band, p.beam.aperture, &g),
        ModeFamily::Hologram => unreachable!(),
    }
    .map_err(invalid)?;
    check_power("mode normalization", 1.0, field.power())?;
    let spec = modes::decompose_oam(&field, p.band, p.beam.aperture).map_err(invalid)?;
    out.write("intensity.pgm", &io::intensity_image(&field).to_pgm())?;
    out.write("phase.pgm", &io::phase_image(&field).to_pgm())?;
    out.write("field.csv", io::field_to_csv(&field).as_bytes())?;
    out.write("spectrum.csv", spectrum_csv(&spec).as_bytes())?;
    out.write_json("summary.json", &json!({ "family": p.family, "power": field.power(), "spectrum_power": spec.norm_sqr() }))
}

// ---------------------------------------------------------------------------

fn run_sorter(p: &SorterParams, out: &mut OutputDir) -> Result<(), CliError> {
    if p.band < 0 {
        return Err(CliError::Validation(format!("band {} must be ≥ 0", p.band)));
    }
    let cfg = p.resolved();
    cfg.validate().map_err(invalid)?;
    let matrix = sorter::crosstalk_matrix(p.band, &cfg).map_err(invalid)?;
    out.write("crosstalk.csv", matrix.to_csv().as_bytes())?;
    let neighbours: Vec<_> = matrix
        .send_labels()
        .iter()
        .map(|&l| json!({ "sent": l, "neighbor_crosstalk": matrix.neighbor_crosstalk(l), "loss": matrix.loss(l) }))
        .collect();
    out.write_json(
        "summary.json",
        &json!({
            "basis": cfg.basis,
            "copies": cfg.copies,
            "band": p.band,
            "mutual_information_raw": matrix.mutual_information_raw(),
            "mutual_information_detected": matrix.mutual_information_detected(),
            "mean_diagonal": matrix.mean_diagonal(),
            "modes": neighbours,
        }),
    )?;
    if p.images {
        let (_, centres, width) = sorter::bin_layout(&cfg, p.band);
        let reach = centres.iter().fold(0.0_f64, |m, c| m.max(c.abs())) + width;
        for &label in matrix.send_labels() {
            let input = match cfg.basis {
                SortBasis::Oam => modes::vortex_mode(label, cfg.aperture, &cfg.grid),
                SortBasis::Ang => modes::ang_mode(label, p.band, cfg.aperture, &cfg.grid),
            }
            .map_err(invalid)?;
            let det = sorter::sort(&input, &cfg).map_err(invalid)?;
            check_power(&format!("sorter mode {label}"), input.power(), det.power())?;
            out.write(&format!("detector/{label:+03}.pgm"), &cropped_image(&det, 1.25 * reach).to_pgm())?;
        }
    }
    Ok(())
}

/// Intensity of the rows within `half` of the optical axis, scaled to the peak.
fn cropped_image(det: &ComplexField, half: f64) -> GrayImage {
    let g = det.grid();
    let rows: Vec<usize> = (0..g.ny()).filter(|&j| g.y(j).abs() <= half).collect();
    let peak = det.data().iter().map(|u| u.norm_sqr()).fold(0.0, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    let mut v = Vec::with_capacity(rows.len() * g.nx());
    for &j in rows.iter().rev() {
        v.extend((0..g.nx()).map(|i| det.data()[g.index(i, j)].norm_sqr() * scale));
    }
    GrayImage::from_unit(g.nx(), rows.len(), &v)
}

// ---------------------------------------------------------------------------

/// Matched-basis QBER a channel matrix implies with uniform symbols and
/// ideal detectors: one minus the correct-symbol rate among detections.
pub(crate) fn channel_qber(m: &CrosstalkMatrix) -> f64 {
    let (mut correct, mut detected) = (0.0, 0.0);
    for &s in m.send_labels() {
        correct += m.prob(s, s).unwrap_or(0.0);
        detected += 1.0 - m.loss(s).unwrap_or(0.0);
    }
    1.0 - correct / detected
}

fn run_qkd(p: &QkdParams, seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    let channel = match &p.channel {
        Some(path) => {
            let text = String::from_utf8(read_file(path)?).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            Some(CrosstalkMatrix::from_csv(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?)
        }
        None => None,
    };
    let cfg = ProtocolConfig {
        source: p.source.clone(),
        channel: channel.clone(),
        detection_efficiency: p.detection_efficiency,
        dark_count: p.dark_count,
        pns_block_fraction: p.pns_block_fraction,
        ..ProtocolConfig::new(p.protocol, p.dimension, p.mubs, p.eve, p.pulses, seed)
    };
    cfg.validate().map_err(invalid)?;
    let t = qkd::run_protocol(&cfg).map_err(invalid)?;
    let ir = qkd::intercept_resend_bound(p.dimension, p.mubs).map_err(invalid)?;
    let coherent = qkd::coherent_attack_bound(p.dimension);
    let decoy = match &p.source {
        Source::Poisson { intensities } if intensities.len() == 3 && p.protocol == qkd::Protocol::Bb84 => {
            Some(qkd::decoy_analysis(&cfg).map_err(invalid)?)
        }
        _ => None,
    };
    let verdict = if t.qber < coherent { "secure" } else { "abort" };
    if p.transcript {
        out.write("transcript.csv", t.to_csv().as_bytes())?;
    }
    out.write_json(
        "summary.json",
        &json!({
            "protocol": p.protocol,
            "dimension": p.dimension,
            "mubs": p.mubs,
            "eve": p.eve,
            "pulses": p.pulses,
            "detected": t.detected,
            "sifted": t.sifted,
            "errors": t.errors,
            "qber": t.qber,
            "sift_ratio": t.sift_ratio,
            "bounds": { "intercept_resend": ir, "coherent_attack": coherent },
            "verdict": verdict,
            "decoy": decoy,
            "channel_expected_qber": channel.as_ref().map(channel_qber),
        }),
    )
}

// ---------------------------------------------------------------------------

fn builtin_mask(size: usize, inside: impl Fn(f64, f64) -> bool) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut v = Vec::with_capacity(size * size);
    for r in 0..size {
        for col in 0..size {
            let (x, y) = ((col as f64 - c) / size as f64, (c - r as f64) / size as f64);
            v.push(if inside(x, y) { 1.0 } else { 0.0 });
        }
    }
    v
}

fn reflectivity(path: Option<&Path>, size: usize, fallback: impl Fn(f64, f64) -> bool) -> Result<Reflectivity, CliError> {
    match path {
        Some(path) => {
            let img = read_pgm(path)?;
            Reflectivity::new(img.width, img.height, img.normalized()).map_err(invalid)
        }
        None => {
            if size == 0 {
                return Err(CliError::Validation("size must be positive".into()));
            }
            Reflectivity::new(size, size, builtin_mask(size, fallback)).map_err(invalid)
        }
    }
}

fn run_secimg(p: &SecimgParams, seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    let object = reflectivity(p.object.as_deref(), p.size, |x, y| x.hypot(y) <= 0.3)?;
    let attack = match p.attack {
        AttackKind::None => ImagingAttack::None,
        AttackKind::Spoof => {
            let (w, h) = (object.width(), object.height());
            let image = match &p.spoof {
                Some(path) => reflectivity(Some(path), 0, |_, _| false)?,
                None if w == h => reflectivity(None, w, |x, y| x.abs().max((y - 0.1).abs()) <= 0.2)?,
                None => return Err(CliError::Validation("the built-in spoof needs a square object; pass spoof".into())),
            };
            ImagingAttack::Spoof { image, state: p.spoof_state }
        }
    };
    let r = qkd::secure_imaging_scan(&object, &attack, p.pulses_per_pixel, seed).map_err(invalid)?;
    let peak = r.received.iter().cloned().fold(0.0, f64::max);
    let scaled: Vec<f64> = r.received.iter().map(|v| if peak > 0.0 { v / peak } else { 0.0 }).collect();
    out.write("received.pgm", &GrayImage::from_unit(r.width, r.height, &scaled).to_pgm())?;
    let mut csv = String::from("x,y,received,error_rate\n");
    for (k, (rec, err)) in r.received.iter().zip(&r.error_rate).enumerate() {
        let e = err.map_or(String::new(), fmt_f64);
        csv.push_str(&format!("{},{},{},{e}\n", k % r.width, k / r.width, fmt_f64(*rec)));
    }
    out.write("error_map.csv", csv.as_bytes())?;
    out.write_json(
        "summary.json",
        &json!({
            "width": r.width,
            "height": r.height,
            "sifted": r.sifted,
            "errors": r.errors,
            "overall_error": r.overall_error,
            "threshold": qkd::COMPROMISE_THRESHOLD,
            "verdict": r.verdict,
            "compromised": r.verdict == ImagingVerdict::Compromised,
        }),
    )
}

// ---------------------------------------------------------------------------

fn run_weak(p: &WeakParams, seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    let truth = weakmeas::aperture_state(p.aperture, p.rotate, p.band).map_err(invalid)?;
    let cfg = DirectMeasConfig { band: p.band, alpha: p.alpha, theta0: p.theta0, photons_per_setting: p.photons, seed };
    let est = weakmeas::simulate_direct_measurement(&truth, &cfg).map_err(invalid)?;
    let rec = weakmeas::reconstruct_state(&est).map_err(invalid)?;
    if !rec.is_normalized() {
        return Err(CliError::Numerical(format!("reconstructed state norm {}", rec.norm())));
    }
    let mut csv = String::from("ell,re,im,prob,phase,re_err,im_err\n");
    for (e, a) in est.iter().zip(rec.amplitudes()) {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.ell,
            fmt_f64(a.re),
            fmt_f64(a.im),
            fmt_f64(a.norm_sqr()),
            fmt_f64(a.arg()),
            fmt_f64(e.re_err),
            fmt_f64(e.im_err)
        ));
    }
    out.write("weak.csv", csv.as_bytes())?;
    let fidelity = rec.fidelity(&truth).map_err(invalid)?;
    let ramp = if p.rotate != 0.0 {
        let unrotated = weakmeas::aperture_state(p.aperture, 0.0, p.band).map_err(invalid)?;
        let r = weakmeas::fit_phase_ramp(&rec, &unrotated).map_err(invalid)?;
        Some(json!({ "slope": r.slope, "intercept": r.intercept, "uncertainty": r.uncertainty, "modes_used": r.modes_used }))
    } else {
        None
    };
    out.write_json(
        "fit.json",
        &json!({
            "band": p.band,
            "alpha": p.alpha,
            "aperture": p.aperture,
            "rotate": p.rotate,
            "photons": p.photons,
            "fidelity": fidelity,
            "postselection_probability": weakmeas::postselection_probability(&truth, p.theta0),
            "sinc_width": weakmeas::fit_sinc_width(&rec),
            "phase_jumps": weakmeas::phase_jumps(&rec),
            "phase_ramp": ramp,
        }),
    )
}

// ---------------------------------------------------------------------------

fn load_objects(p: &GhostParams) -> Result<ObjectSet, CliError> {
    let Some(dir) = &p.objects else {
        return match p.preset {
            ObjectPreset::Two => ObjectSet::two_shapes(p.grid),
            ObjectPreset::Four => ObjectSet::four_shapes(p.grid),
        }
        .map_err(invalid);
    };
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Validation(format!("no .pgm objects in {}", dir.display())));
    }
    let mut masks = Vec::new();
    let mut dims = None;
    for path in &paths {
        let img = read_pgm(path)?;
        if *dims.get_or_insert((img.width, img.height)) != (img.width, img.height) {
            return Err(CliError::Validation(format!("{} differs in size from the first object", path.display())));
        }
        masks.push(io::image_to_grid_order(&img));
    }
    let (w, h) = dims.expect("at least one object");
    let grid = GridSpec::new(w, h, w as f64 * p.pitch, h as f64 * p.pitch, p.grid.wavelength()).map_err(invalid)?;
    ObjectSet::with_default_tilts(grid, masks).map_err(invalid)
}

fn run_ghost(p: &GhostParams, seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    let objects = load_objects(p)?;
    let plate = ghostid::record_hologram(&objects).map_err(invalid)?;
    let mut reports = Vec::with_capacity(objects.len());
    for k in 0..objects.len() {
        let run_seed = seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let r = ghostid::simulate_ghost_run(&objects, k, &plate, &p.filter, p.pairs, p.accidental, run_seed).map_err(invalid)?;
        if r.true_counts.iter().sum::<u64>() > r.bucket_clicks {
            return Err(CliError::Numerical(format!("object {k}: more true coincidences than bucket clicks")));
        }
        reports.push(r);
    }
    let correct = reports.iter().filter(|r| r.identified == r.object).count();
    let mut csv = String::from("object,detector,true,accidental,total,normalized\n");
    for r in &reports {
        for d in 0..r.totals.len() {
            csv.push_str(&format!(
                "{},{d},{},{},{},{}\n",
                r.object,
                r.true_counts[d],
                r.accidental_counts[d],
                r.totals[d],
                fmt_f64(r.normalized[d])
            ));
        }
    }
    out.write("bars.csv", csv.as_bytes())?;
    out.write_json("report.json", &json!({ "objects": objects.len(), "identified_correctly": correct, "runs": reports }))
}
