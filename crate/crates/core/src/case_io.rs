//! Case-bundle directory format.
//!
//! | file            | content                                                        |
//! |-----------------|----------------------------------------------------------------|
//! | `volume.hdr`    | text lines `dims nx ny nz`, `spacing sx sy sz`, `origin ox oy oz` |
//! | `volume.raw`    | little-endian `i16` HU values, x fastest                       |
//! | `mask.raw`      | `u8` intima flags (0 or 1), same layout                        |
//! | `centerline.csv`| `s,px,py,pz,tx,ty,tz`                                          |
//! | `contours.csv`  | `slice,contour,point,x,y` with `contour` = `lumen`/`intima_outer` |
//! | `profiles.csv`  | `s,d_pre,d_post,d_followup,in_stent` (empty cell = missing)    |
//! | `config.txt`    | `key = value` run configuration                                |
//!
//! Numbers are written in shortest round-trip form, so a saved bundle reloads
//! bit-exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::geometry::{self, Vec2};
use crate::isr::{CenterlineProfile, ProfileSample};
use crate::mesh;

pub const VOLUME_HEADER: &str = "volume.hdr";
pub const VOLUME_RAW: &str = "volume.raw";
pub const MASK_RAW: &str = "mask.raw";
pub const CENTERLINE_CSV: &str = "centerline.csv";
pub const CONTOURS_CSV: &str = "contours.csv";
pub const PROFILES_CSV: &str = "profiles.csv";
pub const CONFIG_TXT: &str = "config.txt";

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{file}: declared size {expected} bytes, payload has {actual}")]
    HeaderMismatch { file: &'static str, expected: usize, actual: usize },
    #[error("invariant violated for {field}{}: {reason}", index.map(|i| format!(" at index {i}")).unwrap_or_default())]
    InvariantViolation {
        field: &'static str,
        index: Option<usize>,
        reason: String,
    },
    #[error("{file}:{line}: {reason}")]
    Malformed { file: &'static str, line: usize, reason: String },
    #[error("config.txt: {0}")]
    Config(#[from] ConfigError),
    #[error("slice index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn violation(field: &'static str, index: Option<usize>, reason: impl Into<String>) -> CaseError {
    CaseError::InvariantViolation {
        field,
        index,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HuVolume {
    pub dims: [usize; 3],
    /// Voxel size (mm).
    pub spacing: [f64; 3],
    /// Center of voxel (0, 0, 0) (mm).
    pub origin: [f64; 3],
    pub values: Vec<i16>,
}

impl HuVolume {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// Voxel center of a linear index (mm).
    pub fn position(&self, idx: usize) -> Vector3<f64> {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        Vector3::new(
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntimaMask {
    pub dims: [usize; 3],
    pub flags: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterlinePoint {
    /// Arclength (mm).
    pub s: f64,
    pub position: Vector3<f64>,
    pub tangent: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Centerline {
    pub points: Vec<CenterlinePoint>,
}

/// In-plane contours of one slice (mm, slice frame coordinates).
#[derive(Debug, Clone, PartialEq)]
pub struct SliceContour {
    pub lumen: Vec<Vec2>,
    pub intima_outer: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseBundle {
    pub volume: HuVolume,
    pub mask: IntimaMask,
    pub centerline: Centerline,
    pub contours: Vec<SliceContour>,
    pub profiles: CenterlineProfile,
    pub config: RunConfig,
}

impl CaseBundle {
    pub fn n_slices(&self) -> usize {
        self.centerline.points.len()
    }

    /// Checks every type and cross-file invariant. With `contour_geometry`
    /// false, contour simplicity, orientation and nesting are left to the
    /// per-slice meshing stage.
    pub fn validate(&self, contour_geometry: bool) -> Result<(), CaseError> {
        let v = &self.volume;
        if v.dims.iter().any(|&d| d == 0) {
            return Err(violation("volume.dims", None, "dimensions must be positive"));
        }
        if v.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(violation("volume.spacing", None, "spacing must be positive"));
        }
        if v.origin.iter().any(|o| !o.is_finite()) {
            return Err(violation("volume.origin", None, "origin must be finite"));
        }
        if v.values.len() != v.len() {
            return Err(violation("volume.values", None, "length differs from dims product"));
        }
        if self.mask.dims != v.dims {
            return Err(violation("mask.dims", None, "mask dims differ from volume dims"));
        }
        if self.mask.flags.len() != v.len() {
            return Err(violation("mask.flags", None, "length differs from dims product"));
        }
        if let Some(i) = self.mask.flags.iter().position(|&f| f > 1) {
            return Err(violation("mask.flags", Some(i), "flags must be 0 or 1"));
        }
        if !self.mask.flags.contains(&1) {
            return Err(violation("mask.flags", None, "no voxel flagged"));
        }
        let pts = &self.centerline.points;
        if pts.is_empty() {
            return Err(violation("centerline", None, "no points"));
        }
        for (i, p) in pts.iter().enumerate() {
            if i == 0 && p.s != 0.0 {
                return Err(violation("centerline.s", Some(0), "must start at 0"));
            }
            if i > 0 && !(p.s > pts[i - 1].s) {
                return Err(violation("centerline.s", Some(i), "must be strictly increasing"));
            }
            if !p.position.iter().all(|x| x.is_finite()) {
                return Err(violation("centerline.position", Some(i), "non-finite"));
            }
            if !((p.tangent.norm() - 1.0).abs() <= 1e-9) {
                return Err(violation("centerline.tangent", Some(i), "not unit norm"));
            }
        }
        let n = pts.len();
        if self.contours.len() != n {
            return Err(violation(
                "contours",
                None,
                format!("{} slices for {n} centerline points", self.contours.len()),
            ));
        }
        for (i, c) in self.contours.iter().enumerate() {
            for (field, poly) in [("contours.lumen", &c.lumen), ("contours.intima_outer", &c.intima_outer)] {
                if poly.len() < 8 {
                    return Err(violation(field, Some(i), format!("{} points (< 8)", poly.len())));
                }
                if poly.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
                    return Err(violation(field, Some(i), "non-finite point"));
                }
            }
            if contour_geometry {
                mesh::validate_contours(&c.lumen, &c.intima_outer)
                    .map_err(|e| violation("contours", Some(i), e.to_string()))?;
            }
        }
        let prof = &self.profiles.samples;
        if prof.len() != n {
            return Err(violation(
                "profiles",
                None,
                format!("{} samples for {n} centerline points", prof.len()),
            ));
        }
        for (i, (p, c)) in prof.iter().zip(pts).enumerate() {
            if (p.s - c.s).abs() > 1e-9 * c.s.abs().max(1.0) {
                return Err(violation("profiles.s", Some(i), "does not match centerline s"));
            }
            for (field, d) in [
                ("profiles.d_pre", p.d_pre),
                ("profiles.d_post", p.d_post),
                ("profiles.d_followup", p.d_followup),
            ] {
                if let Some(d) = d {
                    if !(d > 0.0 && d.is_finite()) {
                        return Err(violation(field, Some(i), "diameter must be positive"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Orthonormal slice frame: `u`, `v` span the plane, `t` is the normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceFrame {
    pub origin: Vector3<f64>,
    pub t: Vector3<f64>,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl SliceFrame {
    /// Frame from the fixed reference `e_z`, or `e_x` when the tangent is
    /// within `|t . e_z| > 0.99` of it.
    pub fn new(origin: Vector3<f64>, tangent: Vector3<f64>) -> Self {
        let t = tangent.normalize();
        let r = if t.z.abs() > 0.99 { Vector3::x() } else { Vector3::z() };
        let u = (r - t * r.dot(&t)).normalize();
        let v = t.cross(&u);
        Self { origin, t, u, v }
    }

    pub fn to_plane(&self, p: &Vector3<f64>) -> Vec2 {
        let d = p - self.origin;
        Vec2::new(d.dot(&self.u), d.dot(&self.v))
    }

    pub fn to_world(&self, q: &Vec2) -> Vector3<f64> {
        self.origin + self.u * q.x + self.v * q.y
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        (p - self.origin).dot(&self.t)
    }
}

pub fn slice_frame(bundle: &CaseBundle, slice: usize) -> Result<SliceFrame, CaseError> {
    let p = bundle.centerline.points.get(slice).ok_or(CaseError::IndexOutOfRange(slice))?;
    Ok(SliceFrame::new(p.position, p.tangent))
}

/// Masked voxels whose centers lie within `max(spacing) / 2` of the slice
/// plane, as `(in-plane position, HU)` in voxel order.
pub fn slice_samples(bundle: &CaseBundle, slice: usize) -> Result<Vec<(Vec2, i16)>, CaseError> {
    let frame = slice_frame(bundle, slice)?;
    let vol = &bundle.volume;
    let half = vol.spacing.iter().cloned().fold(0.0, f64::max) / 2.0;
    let mut out = Vec::new();
    for (idx, (&flag, &hu)) in bundle.mask.flags.iter().zip(&vol.values).enumerate() {
        if flag == 0 {
            continue;
        }
        let p = vol.position(idx);
        if frame.distance(&p).abs() <= half {
            out.push((frame.to_plane(&p), hu));
        }
    }
    Ok(out)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CaseError + '_ {
    move |source| CaseError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_file(dir: &Path, name: &str) -> Result<Vec<u8>, CaseError> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(CaseError::MissingFile(path));
    }
    fs::read(&path).map_err(io_err(&path))
}

fn read_text(dir: &Path, name: &'static str) -> Result<String, CaseError> {
    let bytes = read_file(dir, name)?;
    String::from_utf8(bytes).map_err(|_| CaseError::Malformed {
        file: name,
        line: 0,
        reason: "not valid UTF-8".into(),
    })
}

fn parse_header(text: &str) -> Result<([usize; 3], [f64; 3], [f64; 3]), CaseError> {
    let mal = |line: usize, reason: String| CaseError::Malformed {
        file: VOLUME_HEADER,
        line,
        reason,
    };
    let mut dims = None;
    let mut spacing = None;
    let mut origin = None;
    for (i, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let Some(key) = it.next() else { continue };
        let vals: Vec<&str> = it.collect();
        if vals.len() != 3 {
            return Err(mal(i + 1, format!("`{key}` needs 3 values")));
        }
        match key {
            "dims" => {
                let mut d = [0usize; 3];
                for (k, v) in vals.iter().enumerate() {
                    d[k] = v.parse().map_err(|_| mal(i + 1, format!("bad dimension `{v}`")))?;
                }
                dims = Some(d);
            }
            "spacing" | "origin" => {
                let mut d = [0.0; 3];
                for (k, v) in vals.iter().enumerate() {
                    d[k] = v.parse().map_err(|_| mal(i + 1, format!("bad number `{v}`")))?;
                }
                if key == "spacing" {
                    spacing = Some(d);
                } else {
                    origin = Some(d);
                }
            }
            _ => return Err(mal(i + 1, format!("unknown header key `{key}`"))),
        }
    }
    match (dims, spacing, origin) {
        (Some(d), Some(s), Some(o)) => Ok((d, s, o)),
        _ => Err(mal(0, "header needs dims, spacing and origin".into())),
    }
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes())
}

fn check_columns(file: &'static str, rdr: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<(), CaseError> {
    let headers = rdr.headers().map_err(|e| CaseError::Malformed {
        file,
        line: 1,
        reason: e.to_string(),
    })?;
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(CaseError::Malformed {
            file,
            line: 1,
            reason: format!("expected columns {}", expected.join(",")),
        });
    }
    Ok(())
}

fn records(file: &'static str, text: &str, columns: &[&str]) -> Result<Vec<(usize, Vec<String>)>, CaseError> {
    let mut rdr = csv_reader(text);
    check_columns(file, &mut rdr, columns)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CaseError::Malformed {
            file,
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        out.push((line, rec.iter().map(|s| s.trim().to_string()).collect()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(file: &'static str, line: usize, s: &str) -> Result<T, CaseError> {
    s.parse().map_err(|_| CaseError::Malformed {
        file,
        line,
        reason: format!("cannot parse `{s}`"),
    })
}

fn parse_centerline(text: &str) -> Result<Centerline, CaseError> {
    let f = CENTERLINE_CSV;
    let rows = records(f, text, &["s", "px", "py", "pz", "tx", "ty", "tz"])?;
    let mut points = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        let v: Vec<f64> = r.iter().map(|s| num(f, line, s)).collect::<Result<_, _>>()?;
        points.push(CenterlinePoint {
            s: v[0],
            position: Vector3::new(v[1], v[2], v[3]),
            tangent: Vector3::new(v[4], v[5], v[6]),
        });
    }
    Ok(Centerline { points })
}

fn parse_contours(text: &str) -> Result<Vec<SliceContour>, CaseError> {
    let f = CONTOURS_CSV;
    let rows = records(f, text, &["slice", "contour", "point", "x", "y"])?;
    let mut out: Vec<SliceContour> = Vec::new();
    for (line, r) in rows {
        let slice: usize = num(f, line, &r[0])?;
        let point: usize = num(f, line, &r[2])?;
        let p = Vec2::new(num(f, line, &r[3])?, num(f, line, &r[4])?);
        if slice == out.len() {
            out.push(SliceContour {
                lumen: Vec::new(),
                intima_outer: Vec::new(),
            });
        } else if slice + 1 != out.len() {
            return Err(CaseError::Malformed {
                file: f,
                line,
                reason: format!("slice {slice} out of order"),
            });
        }
        let c = out.last_mut().expect("pushed above");
        let poly = match r[1].as_str() {
            "lumen" => &mut c.lumen,
            "intima_outer" => &mut c.intima_outer,
            other => {
                return Err(CaseError::Malformed {
                    file: f,
                    line,
                    reason: format!("unknown contour `{other}`"),
                })
            }
        };
        if point != poly.len() {
            return Err(CaseError::Malformed {
                file: f,
                line,
                reason: format!("point index {point} out of order"),
            });
        }
        poly.push(p);
    }
    Ok(out)
}

fn parse_profiles(text: &str) -> Result<CenterlineProfile, CaseError> {
    let f = PROFILES_CSV;
    let rows = records(f, text, &["s", "d_pre", "d_post", "d_followup", "in_stent"])?;
    let opt = |line: usize, s: &str| -> Result<Option<f64>, CaseError> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(f, line, s).map(Some)
        }
    };
    let mut samples = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        let in_stent = match r[4].as_str() {
            "0" => false,
            "1" => true,
            other => {
                return Err(CaseError::Malformed {
                    file: f,
                    line,
                    reason: format!("in_stent must be 0 or 1, got `{other}`"),
                })
            }
        };
        samples.push(ProfileSample {
            s: num(f, line, &r[0])?,
            d_pre: opt(line, &r[1])?,
            d_post: opt(line, &r[2])?,
            d_followup: opt(line, &r[3])?,
            in_stent,
        });
    }
    Ok(CenterlineProfile { samples })
}

/// Reads a standalone diameter profile table.
pub fn read_profiles(path: &Path) -> Result<CenterlineProfile, CaseError> {
    if !path.is_file() {
        return Err(CaseError::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_profiles(&text)
}

/// Reads and fully validates a case bundle.
pub fn load_case(dir: &Path) -> Result<CaseBundle, CaseError> {
    let b = load_unchecked(dir)?;
    b.validate(true)?;
    Ok(b)
}

/// Like [`load_case`], but defers contour geometry checks to meshing so a
/// single bad slice does not reject the whole case.
pub fn load_case_deferred(dir: &Path) -> Result<CaseBundle, CaseError> {
    let b = load_unchecked(dir)?;
    b.validate(false)?;
    Ok(b)
}

fn load_unchecked(dir: &Path) -> Result<CaseBundle, CaseError> {
    let (dims, spacing, origin) = parse_header(&read_text(dir, VOLUME_HEADER)?)?;
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| violation("volume.dims", None, "dimension product overflows"))?;
    let raw = read_file(dir, VOLUME_RAW)?;
    let expected = n.checked_mul(2).ok_or_else(|| violation("volume.dims", None, "dimension product overflows"))?;
    if raw.len() != expected {
        return Err(CaseError::HeaderMismatch {
            file: VOLUME_RAW,
            expected,
            actual: raw.len(),
        });
    }
    let values = raw.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
    let flags = read_file(dir, MASK_RAW)?;
    if flags.len() != n {
        return Err(CaseError::HeaderMismatch {
            file: MASK_RAW,
            expected: n,
            actual: flags.len(),
        });
    }
    let centerline = parse_centerline(&read_text(dir, CENTERLINE_CSV)?)?;
    let contours = parse_contours(&read_text(dir, CONTOURS_CSV)?)?;
    let profiles = parse_profiles(&read_text(dir, PROFILES_CSV)?)?;
    let config = RunConfig::parse(&read_text(dir, CONFIG_TXT)?)?;
    Ok(CaseBundle {
        volume: HuVolume {
            dims,
            spacing,
            origin,
            values,
        },
        mask: IntimaMask { dims, flags },
        centerline,
        contours,
        profiles,
        config,
    })
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CaseError> {
    let path = dir.join(name);
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    f.write_all(bytes).map_err(io_err(&path))
}

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `bundle` into `dir` (created if needed).
pub fn save_case(bundle: &CaseBundle, dir: &Path) -> Result<(), CaseError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let v = &bundle.volume;
    let hdr = format!(
        "dims {} {} {}\nspacing {} {} {}\norigin {} {} {}\n",
        v.dims[0], v.dims[1], v.dims[2], v.spacing[0], v.spacing[1], v.spacing[2], v.origin[0], v.origin[1], v.origin[2]
    );
    write_file(dir, VOLUME_HEADER, hdr.as_bytes())?;
    let raw: Vec<u8> = v.values.iter().flat_map(|x| x.to_le_bytes()).collect();
    write_file(dir, VOLUME_RAW, &raw)?;
    write_file(dir, MASK_RAW, &bundle.mask.flags)?;

    let mut s = String::from("s,px,py,pz,tx,ty,tz\n");
    for p in &bundle.centerline.points {
        s += &format!(
            "{},{},{},{},{},{},{}\n",
            p.s, p.position.x, p.position.y, p.position.z, p.tangent.x, p.tangent.y, p.tangent.z
        );
    }
    write_file(dir, CENTERLINE_CSV, s.as_bytes())?;

    let mut s = String::from("slice,contour,point,x,y\n");
    for (i, c) in bundle.contours.iter().enumerate() {
        for (name, poly) in [("lumen", &c.lumen), ("intima_outer", &c.intima_outer)] {
            for (k, p) in poly.iter().enumerate() {
                s += &format!("{i},{name},{k},{},{}\n", p.x, p.y);
            }
        }
    }
    write_file(dir, CONTOURS_CSV, s.as_bytes())?;

    let mut s = String::from("s,d_pre,d_post,d_followup,in_stent\n");
    for p in &bundle.profiles.samples {
        s += &format!(
            "{},{},{},{},{}\n",
            p.s,
            opt_str(p.d_pre),
            opt_str(p.d_post),
            opt_str(p.d_followup),
            u8::from(p.in_stent)
        );
    }
    write_file(dir, PROFILES_CSV, s.as_bytes())?;
    write_file(dir, CONFIG_TXT, bundle.config.to_text().as_bytes())
}

/// A four-by-four-by-two volume with one slice and circular contours.
pub fn minimal_bundle() -> CaseBundle {
    let dims = [4, 4, 2];
    let n = 32;
    let mut flags = vec![0u8; n];
    flags[5] = 1;
    CaseBundle {
        volume: HuVolume {
            dims,
            spacing: [0.4; 3],
            origin: [0.0; 3],
            values: (0..n as i16).map(|i| i * 10).collect(),
        },
        mask: IntimaMask { dims, flags },
        centerline: Centerline {
            points: vec![CenterlinePoint {
                s: 0.0,
                position: Vector3::new(0.6, 0.6, 0.0),
                tangent: Vector3::z(),
            }],
        },
        contours: vec![SliceContour {
            lumen: geometry::circle(Vec2::zeros(), 0.4, 16, 0.0),
            intima_outer: geometry::circle(Vec2::zeros(), 0.8, 16, 0.0),
        }],
        profiles: CenterlineProfile {
            samples: vec![ProfileSample {
                s: 0.0,
                d_pre: Some(2.0),
                d_post: Some(3.0),
                d_followup: None,
                in_stent: true,
            }],
        },
        config: RunConfig::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_is_orthonormal_and_uses_fallback() {
        for t in [Vector3::z(), Vector3::new(1.0, 2.0, 0.5).normalize(), Vector3::new(0.0, 0.1, 1.0).normalize()] {
            let f = SliceFrame::new(Vector3::zeros(), t);
            assert!((f.u.norm() - 1.0).abs() < 1e-14 && (f.v.norm() - 1.0).abs() < 1e-14);
            assert!(f.u.dot(&f.t).abs() < 1e-14 && f.v.dot(&f.t).abs() < 1e-14 && f.u.dot(&f.v).abs() < 1e-14);
            assert!((f.u.cross(&f.v) - f.t).norm() < 1e-14);
        }
        let f = SliceFrame::new(Vector3::zeros(), Vector3::z());
        assert_eq!(f.u, Vector3::x());
        assert_eq!(f.v, Vector3::y());
        let g = SliceFrame::new(Vector3::zeros(), Vector3::x());
        assert_eq!(g.u, Vector3::z());
    }

    #[test]
    fn single_voxel_on_plane_at_origin() {
        let mut b = minimal_bundle();
        b.mask.flags = vec![0; 32];
        let idx = b.volume.index(1, 2, 0);
        b.mask.flags[idx] = 1;
        b.centerline.points[0].position = b.volume.position(idx);
        let s = slice_samples(&b, 0).unwrap();
        assert_eq!(s, vec![(Vec2::zeros(), b.volume.values[idx])]);
        assert!(matches!(slice_samples(&b, 1), Err(CaseError::IndexOutOfRange(1))));
    }

    #[test]
    fn mask_empty_near_plane() {
        let mut b = minimal_bundle();
        b.mask.flags = vec![0; 32];
        let idx = b.volume.index(0, 0, 1);
        b.mask.flags[idx] = 1;
        b.centerline.points[0].position = Vector3::new(0.0, 0.0, -1.0);
        assert!(slice_samples(&b, 0).unwrap().is_empty());
    }

    #[test]
    fn minimal_bundle_is_valid() {
        minimal_bundle().validate(true).unwrap();
    }
}
