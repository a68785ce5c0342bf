//! Per-pixel map extraction over spectral cubes, map files and rendering.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;

use odmr_core::fitter::{lm_fit, mc_fit, hybrid_fit_from_prediction, FitConfig, FitResult};
use odmr_core::nn::ModelWeights;
use odmr_core::rng::{child_seed, domain};
use odmr_core::spectrum::{zscore, FrequencyGrid, Spectrum};
use odmr_core::synth::PriorConfig;
use odmr_core::widefield::{estimate_pixel_snr, InvalidReason, Method, ParamMap, PixelEstimate, ScalarMap, SpectralCube};
use odmr_core::{Error, TargetVector, INPUT_LENGTH};

use crate::bench::fixed_init;
use crate::error::{format_err, ForgeError, Result};
use crate::svg::heatmap_svg;

/// Pixels per parallel work item; also the CNN batch size.
pub const TILE: usize = 64;

#[derive(Debug, Clone)]
pub struct ExtractConfig {
    pub method: Method,
    /// Pixels with an SNR estimate below this are masked.
    pub snr_min: f64,
    pub fit: FitConfig,
    pub prior: PriorConfig,
    pub seed: u64,
    /// Center of the fixed start used by [`Method::SingleFit`].
    pub single_init_center: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            method: Method::Cnn,
            snr_min: 5.0,
            fit: FitConfig::default(),
            prior: PriorConfig::default(),
            seed: 0,
            single_init_center: 0.5,
        }
    }
}

pub fn parse_method(s: &str) -> Option<Method> {
    match s {
        "cnn" => Some(Method::Cnn),
        "hybrid" => Some(Method::Hybrid),
        "mc" | "mc_fit" => Some(Method::McFit),
        "single" => Some(Method::SingleFit),
        _ => None,
    }
}

fn from_fit(r: &FitResult) -> TargetVector {
    let p = r.params;
    TargetVector { center: p.center(), splitting: p.splitting(), w1: p.w1, w2: p.w2, rho: if p.c1 > 0.0 { p.c2 / p.c1 } else { f64::NAN } }
}

fn fit_estimate(r: Result<FitResult>, snr: f64) -> PixelEstimate {
    match r {
        Ok(f) if f.converged => PixelEstimate { mean: from_fit(&f), sigma: None, snr, invalid: None },
        Ok(f) => PixelEstimate { mean: from_fit(&f), sigma: None, snr, invalid: Some(InvalidReason::NotConverged) },
        Err(_) => PixelEstimate::invalid(InvalidReason::BadPixel, snr),
    }
}

/// Extracts line-shape parameters for every pixel of `cube`.
///
/// The network works on the unit grid, so for the CNN the cube's physical
/// axis is only carried along for unit conversion. Fit paths take
/// mean-normalized counts on a unit grid of the cube's length. Per-pixel
/// failures mark the pixel invalid and never abort the map.
pub fn extract_map(cube: &SpectralCube, weights: Option<&ModelWeights<f32>>, cfg: &ExtractConfig) -> Result<ParamMap> {
    let f = cube.grid().len();
    let needs_model = matches!(cfg.method, Method::Cnn | Method::Hybrid);
    let model = match (needs_model, weights) {
        (true, None) => return Err(ForgeError::Usage(format!("method {} needs a checkpoint", cfg.method.name()))),
        (true, Some(w)) => {
            if f != w.arch().input_length() || f != INPUT_LENGTH {
                return Err(Error::Domain(format!("model expects {} frequency points, cube has {f}", w.arch().input_length())).into());
            }
            Some(w)
        }
        (false, _) => None,
    };
    let unit = FrequencyGrid::normalized(f)?;
    let pixel_seed = child_seed(cfg.seed, domain::PIXEL);
    let tiles: Vec<Vec<PixelEstimate>> = (0..cube.n_pixels())
        .collect::<Vec<_>>()
        .par_chunks(TILE)
        .map(|idx| extract_tile(cube, idx, model, cfg, &unit, pixel_seed))
        .collect::<Result<_>>()?;
    let mut map = ParamMap {
        height: cube.height(),
        width: cube.width(),
        grid: *cube.grid(),
        method: cfg.method,
        pixels: tiles.into_iter().flatten().collect(),
    };
    map.mask_low_snr(cfg.snr_min);
    Ok(map)
}

fn extract_tile(
    cube: &SpectralCube,
    idx: &[usize],
    model: Option<&ModelWeights<f32>>,
    cfg: &ExtractConfig,
    unit: &FrequencyGrid,
    pixel_seed: u64,
) -> Result<Vec<PixelEstimate>> {
    let counts: Vec<Vec<f64>> = idx.iter().map(|&i| cube.pixel(i).iter().map(|&v| v as f64).collect()).collect();
    let snrs: Vec<Option<f64>> = counts.iter().map(|c| estimate_pixel_snr(c).ok()).collect();
    let spectra: Vec<Option<Spectrum>> = counts
        .iter()
        .zip(&snrs)
        .map(|(c, s)| s.and_then(|_| Spectrum::new(*unit, c.clone()).and_then(|s| s.mean_normalized()).ok()))
        .collect();
    let mut out = vec![PixelEstimate::invalid(InvalidReason::BadPixel, f64::NAN); idx.len()];

    // network predictions for the usable pixels of this tile
    let preds = match model {
        Some(w) => {
            let mut inputs = Vec::with_capacity(idx.len() * INPUT_LENGTH);
            let mut rows = Vec::new();
            for (k, c) in counts.iter().enumerate() {
                if spectra[k].is_none() {
                    continue;
                }
                if let Ok(z) = zscore(c) {
                    inputs.extend(z.values.iter().map(|&v| v as f32));
                    rows.push(k);
                }
            }
            let p = if rows.is_empty() { Vec::new() } else { w.predict_batch(&inputs, rows.len())? };
            let mut by_row = vec![None; idx.len()];
            for (k, p) in rows.into_iter().zip(p) {
                by_row[k] = Some(p);
            }
            by_row
        }
        None => vec![None; idx.len()],
    };

    for (k, &pixel) in idx.iter().enumerate() {
        let (Some(snr), Some(s)) = (snrs[k], &spectra[k]) else {
            out[k].snr = snrs[k].unwrap_or(f64::NAN);
            continue;
        };
        out[k] = match cfg.method {
            Method::Cnn => match &preds[k] {
                Some(p) => PixelEstimate { mean: p.mean, sigma: Some(p.sigma()), snr, invalid: None },
                None => PixelEstimate::invalid(InvalidReason::BadPixel, snr),
            },
            Method::Hybrid => match &preds[k] {
                Some(p) => fit_estimate(hybrid_fit_from_prediction(p, s, &cfg.fit).map_err(Into::into), snr),
                None => PixelEstimate::invalid(InvalidReason::BadPixel, snr),
            },
            Method::McFit => fit_estimate(mc_fit(s, pixel_seed.wrapping_add(pixel as u64), &cfg.fit, &cfg.prior).map_err(Into::into), snr),
            Method::SingleFit => fit_estimate(lm_fit(s, &fixed_init(cfg.single_init_center), &cfg.fit).map_err(Into::into), snr),
        };
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// map files

const PARAM_TAG: &str = "# odmr-param-map";
const PARAM_COLUMNS: [&str; 16] = [
    "y", "x", "center", "splitting", "w1", "w2", "rho", "sd_center", "sd_splitting", "sd_w1", "sd_w2", "sd_rho", "snr", "valid", "reason",
    "reason_code",
];

fn reason_name(r: Option<InvalidReason>) -> &'static str {
    r.map_or("", InvalidReason::name)
}

pub fn write_param_map<W: Write>(map: &ParamMap, mut out: W) -> Result<()> {
    let (start, stop) = map.grid.range_ghz().unwrap_or((f64::NAN, f64::NAN));
    writeln!(
        out,
        "{PARAM_TAG} height={} width={} points={} start_ghz={start} stop_ghz={stop} method={}",
        map.height,
        map.width,
        map.grid.len(),
        map.method.name()
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PARAM_COLUMNS)?;
    for (i, p) in map.pixels.iter().enumerate() {
        let sd = p.sigma.unwrap_or([f64::NAN; 5]);
        let mut rec = vec![(i / map.width).to_string(), (i % map.width).to_string()];
        rec.extend(p.mean.to_array().iter().chain(&sd).map(|v| v.to_string()));
        rec.push(p.snr.to_string());
        rec.push(u8::from(p.is_valid()).to_string());
        rec.push(reason_name(p.invalid).into());
        rec.push(p.invalid.map_or(0, InvalidReason::code).to_string());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_param_map(map: &ParamMap, path: &Path) -> Result<()> {
    write_param_map(map, std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn header_field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| format_err(format!("parameter map header lacks {key}")))
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| format_err(format!("cannot parse {what} from {s:?}")))
}

pub fn read_param_map<R: BufRead>(mut input: R) -> Result<ParamMap> {
    let mut first = String::new();
    input.read_line(&mut first)?;
    if !first.starts_with(PARAM_TAG) {
        return Err(format_err("not a parameter map (missing header line)"));
    }
    let height: usize = parse(header_field(&first, "height")?, "height")?;
    let width: usize = parse(header_field(&first, "width")?, "width")?;
    let points: usize = parse(header_field(&first, "points")?, "points")?;
    let start: f64 = parse(header_field(&first, "start_ghz")?, "start_ghz")?;
    let stop: f64 = parse(header_field(&first, "stop_ghz")?, "stop_ghz")?;
    let method = parse_method(header_field(&first, "method")?).ok_or_else(|| format_err("unknown method in map header"))?;
    let grid = if start.is_finite() { FrequencyGrid::physical(points, start, stop)? } else { FrequencyGrid::normalized(points)? };
    let mut rd = csv::Reader::from_reader(input);
    let mut pixels = Vec::with_capacity(height * width);
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != PARAM_COLUMNS.len() {
            return Err(format_err(format!("parameter map row {}: {} fields", row + 1, rec.len())));
        }
        let (y, x): (usize, usize) = (parse(&rec[0], "y")?, parse(&rec[1], "x")?);
        if y * width + x != pixels.len() {
            return Err(format_err(format!("parameter map row {} is out of order", row + 1)));
        }
        let v: Vec<f64> = (2..13).map(|j| parse(&rec[j], PARAM_COLUMNS[j])).collect::<Result<_>>()?;
        let sd = [v[5], v[6], v[7], v[8], v[9]];
        let code: u8 = parse(&rec[15], "reason_code")?;
        pixels.push(PixelEstimate {
            mean: TargetVector::from_array([v[0], v[1], v[2], v[3], v[4]]),
            sigma: if sd.iter().all(|s| s.is_nan()) { None } else { Some(sd) },
            snr: v[10],
            invalid: if code == 0 { None } else { Some(InvalidReason::from_code(code).ok_or_else(|| format_err("unknown reason code"))?) },
        });
    }
    if pixels.len() != height * width {
        return Err(format_err(format!("parameter map has {} pixels, header says {}", pixels.len(), height * width)));
    }
    Ok(ParamMap { height, width, grid, method, pixels })
}

pub fn load_param_map(path: &Path) -> Result<ParamMap> {
    read_param_map(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Scalar map CSV: `y,x,value,valid,reason`.
pub fn write_scalar_map<W: Write>(map: &ScalarMap, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["y", "x", "value", "valid", "reason"])?;
    for i in 0..map.values.len() {
        w.write_record([
            (i / map.width).to_string(),
            (i % map.width).to_string(),
            map.values[i].to_string(),
            u8::from(map.is_valid(i)).to_string(),
            reason_name(map.invalid[i]).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_scalar_map(map: &ScalarMap, path: &Path) -> Result<()> {
    write_scalar_map(map, std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn reason_from_name(s: &str) -> Result<Option<InvalidReason>> {
    if s.is_empty() {
        return Ok(None);
    }
    (1..=4)
        .filter_map(InvalidReason::from_code)
        .find(|r| r.name() == s)
        .map(Some)
        .ok_or_else(|| format_err(format!("unknown invalid reason {s:?}")))
}

pub fn load_scalar_map(path: &Path) -> Result<ScalarMap> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut cells = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(format_err("scalar map rows need 5 fields"));
        }
        let valid: u8 = parse(&rec[3], "valid")?;
        let mut reason = reason_from_name(&rec[4])?;
        if valid == 0 && reason.is_none() {
            reason = Some(InvalidReason::BadPixel);
        }
        cells.push((parse::<usize>(&rec[0], "y")?, parse::<usize>(&rec[1], "x")?, parse::<f64>(&rec[2], "value")?, reason));
    }
    let height = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
    let width = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
    if cells.len() != height * width {
        return Err(format_err("scalar map is not a full rectangle"));
    }
    let mut values = vec![f64::NAN; cells.len()];
    let mut invalid = vec![None; cells.len()];
    for (y, x, v, r) in cells {
        values[y * width + x] = v;
        invalid[y * width + x] = r;
    }
    Ok(ScalarMap::new(height, width, values, invalid)?)
}

/// One parameter of a [`ParamMap`] as a scalar map, in physical units when
/// the grid has them (GHz for center, MHz for splitting and widths).
pub fn param_channel(map: &ParamMap, name: &str) -> Result<ScalarMap> {
    let span_mhz = map.grid.span_ghz().map(|s| s * 1e3);
    let values: Vec<f64> = match name {
        "center" => (0..map.pixels.len()).map(|i| map.center_ghz(i).unwrap_or(map.pixels[i].mean.center)).collect(),
        "splitting" | "w1" | "w2" => {
            let j = match name {
                "splitting" => 1,
                "w1" => 2,
                _ => 3,
            };
            map.pixels.iter().map(|p| p.mean.to_array()[j] * span_mhz.unwrap_or(1.0)).collect()
        }
        "rho" => map.pixels.iter().map(|p| p.mean.rho).collect(),
        "snr" => map.pixels.iter().map(|p| p.snr).collect(),
        _ => return Err(ForgeError::Usage(format!("unknown map parameter {name:?}"))),
    };
    let invalid = map.pixels.iter().map(|p| if name == "snr" { None } else { p.invalid }).collect();
    Ok(ScalarMap::new(map.height, map.width, values, invalid)?)
}

// ---------------------------------------------------------------------------
// rendering

/// 16-bit binary PGM. Valid pixels scale linearly onto `1..=65535` between the
/// valid minimum and maximum (recorded in a comment); invalid pixels are 0.
pub fn encode_pgm(map: &ScalarMap) -> Vec<u8> {
    let (lo, hi) = map.range().unwrap_or((0.0, 0.0));
    let mut out = format!("P5\n# min {lo:e} max {hi:e}\n# invalid 0\n{} {}\n65535\n", map.width, map.height).into_bytes();
    for i in 0..map.values.len() {
        let level: u16 = if map.is_valid(i) && map.values[i].is_finite() {
            if hi > lo {
                (1.0 + (map.values[i] - lo) / (hi - lo) * 65534.0).round() as u16
            } else {
                32768
            }
        } else {
            0
        };
        out.extend_from_slice(&level.to_be_bytes());
    }
    out
}

/// Decoded PGM levels plus the recorded value range.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub min: f64,
    pub max: f64,
    pub levels: Vec<u16>,
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Pgm> {
    let mut pos = 0;
    let mut line = || -> Result<&str> {
        let end = bytes[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| format_err("PGM header truncated"))?;
        let s = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| format_err("PGM header is not text"))?;
        pos += end + 1;
        Ok(s)
    };
    if line()? != "P5" {
        return Err(format_err("not a binary PGM"));
    }
    let (mut min, mut max) = (f64::NAN, f64::NAN);
    let dims = loop {
        let l = line()?;
        if let Some(rest) = l.strip_prefix("# min ") {
            let mut it = rest.split_whitespace();
            min = parse(it.next().unwrap_or(""), "min")?;
            max = parse(it.nth(1).unwrap_or(""), "max")?;
        } else if !l.starts_with('#') {
            break l.to_string();
        }
    };
    let mut it = dims.split_whitespace();
    let width: usize = parse(it.next().unwrap_or(""), "width")?;
    let height: usize = parse(it.next().unwrap_or(""), "height")?;
    if line()? != "65535" {
        return Err(format_err("expected a 16-bit PGM"));
    }
    let data = &bytes[pos..];
    if data.len() != width * height * 2 {
        return Err(format_err(format!("PGM data has {} bytes, expected {}", data.len(), width * height * 2)));
    }
    let levels = data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok(Pgm { width, height, min, max, levels })
}

pub fn render_svg(map: &ScalarMap, title: &str, unit: &str) -> String {
    let cells: Vec<Option<f64>> =
        (0..map.values.len()).map(|i| (map.is_valid(i) && map.values[i].is_finite()).then_some(map.values[i])).collect();
    heatmap_svg(title, unit, map.height, map.width, &cells)
}

/// Writes `<stem>.pgm` and `<stem>.svg` next to each other.
pub fn render_map(map: &ScalarMap, stem: &Path, title: &str, unit: &str) -> Result<()> {
    std::fs::write(stem.with_extension("pgm"), encode_pgm(map))?;
    std::fs::write(stem.with_extension("svg"), render_svg(map, title, unit))?;
    Ok(())
}

/// Histogram as CSV rows `bin_center,count`.
pub fn histogram_csv(h: &odmr_core::stats::Histogram) -> String {
    let mut s = String::from("bin_center,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        let _ = writeln!(s, "{},{c}", h.bin_center(i));
    }
    s
}
