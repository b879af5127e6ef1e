//! Text dataset layout.
//!
//! ```text
//! <root>/
//!   queries/poses.csv            frame_id,camera_id,qw,qx,qy,qz,tx,ty,tz
//!   queries/intrinsics.csv       camera_id,fx,fy,cx,cy,width,height
//!   queries/keypoints/<id>.csv   idx,u,v
//!   queries/descriptors/<id>.csv idx,d0,...,d{D-1}          (optional)
//!   queries/point_ids/<id>.csv   idx,point_id               (optional, synthetic data)
//!   queries/global_descriptors.csv frame_id,g0,...,g{G-1}   (optional)
//!   queries/rig_frames.csv       rig_frame_id,rig_id,frame_id (optional, multi-camera rigs)
//!   queries/covariance.csv       c0,...,c5 — six rows       (optional)
//!   references/...               same files as queries, plus optional geo.csv:
//!                                frame_id,lat,lon,alt,heading_deg
//!   rig_extrinsics.csv           rig_id,camera_id,qw,...,tz (optional)
//!   matches/<A>__<B>.csv         idxA,idxB,score            (optional)
//! ```
//!
//! Several query sequences may be stored as `queries/<sequence_id>/` subdirectories
//! instead of directly in `queries/`. Row order in `poses.csv` is the temporal order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix6, Vector2};

use super::geodetic::{geodetic_to_local, heading_pose, GeodeticPoint};
use super::{is_spd, Dataset, Descriptors, Frame, IngestError, QuerySequence, Rig, RigCamera};
use crate::geometry::{CameraIntrinsics, Pose};

const POSE_HEADER: [&str; 9] = ["frame_id", "camera_id", "qw", "qx", "qy", "qz", "tx", "ty", "tz"];
const RIG_CONSISTENCY_TOL: f64 = 1e-6;

pub(crate) struct Table {
    pub path: PathBuf,
    pub headers: Vec<String>,
    pub rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, IngestError> {
        if !path.is_file() {
            return Err(IngestError::MissingFile(path.to_path_buf()));
        }
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let headers = reader
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_owned)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec.iter().map(str::to_owned).collect()));
        }
        Ok(Self {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    pub fn read_optional(path: &Path) -> Result<Option<Self>, IngestError> {
        if path.exists() {
            Self::read(path).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn malformed(&self, line: u64, msg: impl Into<String>) -> IngestError {
        IngestError::Malformed {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    pub fn invariant(&self, record: &str, msg: impl Into<String>) -> IngestError {
        IngestError::Invariant {
            path: self.path.clone(),
            record: record.to_owned(),
            msg: msg.into(),
        }
    }

    pub fn expect_header(&self, expected: &[&str]) -> Result<(), IngestError> {
        if self.headers.len() < expected.len()
            || self.headers.iter().zip(expected).any(|(a, b)| a != b)
        {
            return Err(self.malformed(1, format!("expected header `{}`", expected.join(","))));
        }
        Ok(())
    }

    pub fn f64_at(&self, line: u64, row: &[String], col: usize) -> Result<f64, IngestError> {
        let s = row
            .get(col)
            .ok_or_else(|| self.malformed(line, format!("missing column {col}")))?;
        let v: f64 = s
            .parse()
            .map_err(|_| self.malformed(line, format!("`{s}` is not a number")))?;
        if !v.is_finite() {
            return Err(self.malformed(line, format!("`{s}` is not finite")));
        }
        Ok(v)
    }

    pub fn usize_at(&self, line: u64, row: &[String], col: usize) -> Result<usize, IngestError> {
        let s = row
            .get(col)
            .ok_or_else(|| self.malformed(line, format!("missing column {col}")))?;
        s.parse()
            .map_err(|_| self.malformed(line, format!("`{s}` is not an index")))
    }

    pub fn pose_at(&self, line: u64, row: &[String], first: usize) -> Result<Option<Pose>, IngestError> {
        let fields = &row[first..first + 7];
        if fields.iter().all(|s| s.is_empty()) {
            return Ok(None);
        }
        let mut r = [0.0; 7];
        for (k, v) in r.iter_mut().enumerate() {
            *v = self.f64_at(line, row, first + k)?;
        }
        Pose::from_record(r)
            .map(Some)
            .map_err(|e| self.malformed(line, e.to_string()))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> IngestError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => IngestError::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => IngestError::Malformed {
            path: path.to_path_buf(),
            line,
            msg: format!("{kind:?}"),
        },
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    // Shortest representation that round-trips exactly.
    format!("{v}")
}

pub(crate) struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self, IngestError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| IngestError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        writer.write_record(header).map_err(|e| csv_error(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), IngestError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer
            .write_record(fields)
            .map_err(|e| csv_error(&self.path, e))
    }

    pub fn finish(mut self) -> Result<(), IngestError> {
        self.writer.flush().map_err(|source| IngestError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

fn read_intrinsics(dir: &Path) -> Result<HashMap<String, CameraIntrinsics>, IngestError> {
    let t = Table::read(&dir.join("intrinsics.csv"))?;
    t.expect_header(&["camera_id", "fx", "fy", "cx", "cy", "width", "height"])?;
    let mut out = HashMap::new();
    for (line, row) in &t.rows {
        let mut v = [0.0; 6];
        for (k, x) in v.iter_mut().enumerate() {
            *x = t.f64_at(*line, row, k + 1)?;
        }
        let k = CameraIntrinsics {
            fx: v[0],
            fy: v[1],
            cx: v[2],
            cy: v[3],
            width: v[4],
            height: v[5],
        };
        k.validate().map_err(|e| t.invariant(&row[0], e.to_string()))?;
        out.insert(row[0].clone(), k);
    }
    Ok(out)
}

fn read_keypoints(path: &Path) -> Result<Vec<Vector2<f64>>, IngestError> {
    let t = Table::read(path)?;
    t.expect_header(&["idx", "u", "v"])?;
    let mut kps = Vec::with_capacity(t.rows.len());
    for (i, (line, row)) in t.rows.iter().enumerate() {
        if t.usize_at(*line, row, 0)? != i {
            return Err(t.malformed(*line, format!("expected idx {i}")));
        }
        kps.push(Vector2::new(t.f64_at(*line, row, 1)?, t.f64_at(*line, row, 2)?));
    }
    Ok(kps)
}

fn read_descriptors(path: &Path) -> Result<Option<Descriptors>, IngestError> {
    let Some(t) = Table::read_optional(path)? else {
        return Ok(None);
    };
    let dim = t.headers.len().saturating_sub(1);
    if dim == 0 || t.headers[0] != "idx" {
        return Err(t.malformed(1, "expected header `idx,d0,...`"));
    }
    let mut data = Vec::with_capacity(t.rows.len() * dim);
    for (i, (line, row)) in t.rows.iter().enumerate() {
        if t.usize_at(*line, row, 0)? != i {
            return Err(t.malformed(*line, format!("expected idx {i}")));
        }
        for c in 1..=dim {
            data.push(t.f64_at(*line, row, c)?);
        }
    }
    Ok(Some(Descriptors::new(dim, data)))
}

fn read_point_ids(path: &Path) -> Result<Option<Vec<Option<u64>>>, IngestError> {
    let Some(t) = Table::read_optional(path)? else {
        return Ok(None);
    };
    t.expect_header(&["idx", "point_id"])?;
    let mut ids = Vec::with_capacity(t.rows.len());
    for (i, (line, row)) in t.rows.iter().enumerate() {
        if t.usize_at(*line, row, 0)? != i {
            return Err(t.malformed(*line, format!("expected idx {i}")));
        }
        let s = &row[1];
        ids.push(if s.is_empty() {
            None
        } else {
            Some(s.parse().map_err(|_| t.malformed(*line, format!("`{s}` is not a point id")))?)
        });
    }
    Ok(Some(ids))
}

fn read_global_descriptors(dir: &Path) -> Result<HashMap<String, Vec<f64>>, IngestError> {
    let Some(t) = Table::read_optional(&dir.join("global_descriptors.csv"))? else {
        return Ok(HashMap::new());
    };
    if t.headers.len() < 2 || t.headers[0] != "frame_id" {
        return Err(t.malformed(1, "expected header `frame_id,g0,...`"));
    }
    let mut out = HashMap::new();
    for (line, row) in &t.rows {
        let g = (1..t.headers.len())
            .map(|c| t.f64_at(*line, row, c))
            .collect::<Result<Vec<_>, _>>()?;
        out.insert(row[0].clone(), g);
    }
    Ok(out)
}

/// Reads the frames listed in `<dir>/poses.csv`, in file order.
fn read_frames(dir: &Path) -> Result<(Table, Vec<Frame>), IngestError> {
    let poses = Table::read(&dir.join("poses.csv"))?;
    poses.expect_header(&POSE_HEADER)?;
    let intrinsics = read_intrinsics(dir)?;
    let mut globals = read_global_descriptors(dir)?;
    let mut seen = HashSet::new();
    let mut frames = Vec::with_capacity(poses.rows.len());
    for (line, row) in &poses.rows {
        let frame_id = row[0].clone();
        if !seen.insert(frame_id.clone()) {
            return Err(poses.invariant(&frame_id, "duplicate frame_id"));
        }
        let k = *intrinsics
            .get(&row[1])
            .ok_or_else(|| poses.invariant(&frame_id, format!("unknown camera_id `{}`", row[1])))?;
        let mut frame = Frame::new(frame_id.clone(), row[1].clone(), k);
        frame.pose = poses.pose_at(*line, row, 2)?;
        frame.keypoints = read_keypoints(&dir.join("keypoints").join(format!("{frame_id}.csv")))?;
        frame.descriptors = read_descriptors(&dir.join("descriptors").join(format!("{frame_id}.csv")))?;
        frame.point_ids = read_point_ids(&dir.join("point_ids").join(format!("{frame_id}.csv")))?;
        frame.global_descriptor = globals.remove(&frame_id);
        frame
            .check()
            .map_err(|msg| poses.invariant(&frame_id, msg))?;
        frames.push(frame);
    }
    Ok((poses, frames))
}

type Extrinsics = HashMap<(String, String), Pose>;

fn read_extrinsics(root: &Path) -> Result<Extrinsics, IngestError> {
    let Some(t) = Table::read_optional(&root.join("rig_extrinsics.csv"))? else {
        return Ok(HashMap::new());
    };
    t.expect_header(&["rig_id", "camera_id", "qw", "qx", "qy", "qz", "tx", "ty", "tz"])?;
    let mut out = HashMap::new();
    for (line, row) in &t.rows {
        let pose = t
            .pose_at(*line, row, 2)?
            .ok_or_else(|| t.malformed(*line, "missing extrinsic"))?;
        out.insert((row[0].clone(), row[1].clone()), pose);
    }
    Ok(out)
}

fn read_covariance(dir: &Path) -> Result<Option<Matrix6<f64>>, IngestError> {
    let Some(t) = Table::read_optional(&dir.join("covariance.csv"))? else {
        return Ok(None);
    };
    if t.rows.len() != 6 || t.headers.len() != 6 {
        return Err(t.malformed(1, "covariance must be 6 rows of 6 values"));
    }
    let mut m = Matrix6::zeros();
    for (r, (line, row)) in t.rows.iter().enumerate() {
        for c in 0..6 {
            m[(r, c)] = t.f64_at(*line, row, c)?;
        }
    }
    if !is_spd(&m) {
        return Err(t.invariant("covariance", "matrix is not symmetric positive definite"));
    }
    Ok(Some(m))
}

fn load_sequence(dir: &Path, sequence_id: &str, extrinsics: &Extrinsics) -> Result<QuerySequence, IngestError> {
    let (poses, frames) = read_frames(dir)?;
    if frames.is_empty() {
        return Err(IngestError::NoQueries(dir.to_path_buf()));
    }
    for f in &frames {
        if f.pose.is_none() {
            return Err(poses.invariant(&f.frame_id, "query frame has no odometry pose"));
        }
    }
    let rigs = match Table::read_optional(&dir.join("rig_frames.csv"))? {
        None => frames
            .into_iter()
            .map(|f| Rig::monocular(f).expect("pose checked above"))
            .collect(),
        Some(t) => group_rigs(&t, frames, extrinsics)?,
    };
    Ok(QuerySequence {
        sequence_id: sequence_id.to_owned(),
        rigs,
        covariance: read_covariance(dir)?,
    })
}

fn group_rigs(t: &Table, frames: Vec<Frame>, extrinsics: &Extrinsics) -> Result<Vec<Rig>, IngestError> {
    t.expect_header(&["rig_frame_id", "rig_id", "frame_id"])?;
    let mut by_id: HashMap<String, Frame> = frames.into_iter().map(|f| (f.frame_id.clone(), f)).collect();
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (String, Vec<Frame>)> = HashMap::new();
    for (line, row) in &t.rows {
        let frame = by_id
            .remove(&row[2])
            .ok_or_else(|| t.malformed(*line, format!("unknown or repeated frame_id `{}`", row[2])))?;
        let entry = groups.entry(row[0].clone()).or_insert_with(|| {
            order.push(row[0].clone());
            (row[1].clone(), Vec::new())
        });
        if entry.0 != row[1] {
            return Err(t.invariant(&row[0], "rig-frame mixes rig ids"));
        }
        entry.1.push(frame);
    }
    if let Some(id) = by_id.keys().next() {
        return Err(t.invariant(id, "frame not assigned to any rig-frame"));
    }
    let mut rigs = Vec::with_capacity(order.len());
    for rig_frame_id in order {
        let (rig_id, frames) = groups.remove(&rig_frame_id).expect("grouped above");
        let mut cameras = Vec::with_capacity(frames.len());
        for f in &frames {
            let extrinsic = *extrinsics
                .get(&(rig_id.clone(), f.camera_id.clone()))
                .ok_or_else(|| t.invariant(&f.frame_id, format!("no extrinsic for rig `{rig_id}` camera `{}`", f.camera_id)))?;
            cameras.push(RigCamera {
                camera_id: f.camera_id.clone(),
                extrinsic,
            });
        }
        // T(q←rig) = T(q←cam)·T(rig←cam)⁻¹, which must agree across cameras.
        let pose = frames[0].pose.expect("checked").compose(&cameras[0].extrinsic.inverse());
        for (f, cam) in frames.iter().zip(&cameras).skip(1) {
            let other = f.pose.expect("checked").compose(&cam.extrinsic.inverse());
            let dt = (other.translation() - pose.translation()).norm();
            let dr = other.rotation().angle_to(pose.rotation());
            if dt > RIG_CONSISTENCY_TOL || dr > RIG_CONSISTENCY_TOL {
                return Err(t.invariant(&f.frame_id, "camera pose disagrees with rig extrinsics"));
            }
        }
        rigs.push(Rig {
            rig_frame_id,
            rig_id,
            pose,
            cameras,
            frames,
        });
    }
    Ok(rigs)
}

fn apply_geo(dir: &Path, frames: &mut [Frame]) -> Result<(), IngestError> {
    let Some(t) = Table::read_optional(&dir.join("geo.csv"))? else {
        return Ok(());
    };
    t.expect_header(&["frame_id", "lat", "lon", "alt", "heading_deg"])?;
    let mut origin = None;
    for (line, row) in &t.rows {
        let p = GeodeticPoint::new(
            t.f64_at(*line, row, 1)?,
            t.f64_at(*line, row, 2)?,
            t.f64_at(*line, row, 3)?,
        );
        let origin = *origin.get_or_insert(p);
        let enu = geodetic_to_local(p, origin)?;
        let frame = frames
            .iter_mut()
            .find(|f| f.frame_id == row[0])
            .ok_or_else(|| t.invariant(&row[0], "geo row for unknown reference frame"))?;
        frame.pose = Some(heading_pose(enu, t.f64_at(*line, row, 4)?));
    }
    Ok(())
}

/// Loads and validates a dataset directory.
pub fn load_dataset(root: &Path) -> Result<Dataset, IngestError> {
    let ref_dir = root.join("references");
    let (ref_table, mut references) = read_frames(&ref_dir)?;
    if references.is_empty() {
        return Err(IngestError::NoReferences(ref_dir));
    }
    apply_geo(&ref_dir, &mut references)?;
    if let Some(f) = references.iter().find(|f| f.pose.is_none()) {
        return Err(ref_table.invariant(&f.frame_id, "reference frame has no global pose"));
    }

    let extrinsics = read_extrinsics(root)?;
    let query_dir = root.join("queries");
    let sequences = if query_dir.join("poses.csv").is_file() {
        vec![load_sequence(&query_dir, "queries", &extrinsics)?]
    } else {
        let mut dirs: Vec<PathBuf> = fs::read_dir(&query_dir)
            .map_err(|_| IngestError::MissingFile(query_dir.join("poses.csv")))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("poses.csv").is_file())
            .collect();
        dirs.sort();
        if dirs.is_empty() {
            return Err(IngestError::MissingFile(query_dir.join("poses.csv")));
        }
        dirs.iter()
            .map(|d| {
                let id = d.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                load_sequence(d, &id, &extrinsics)
            })
            .collect::<Result<_, _>>()?
    };

    Ok(Dataset {
        root: Some(root.to_path_buf()),
        sequences,
        references,
    })
}

fn write_frames(dir: &Path, frames: &[&Frame]) -> Result<(), IngestError> {
    let mut poses = CsvOut::create(&dir.join("poses.csv"), &POSE_HEADER)?;
    let mut cams: BTreeMap<&str, CameraIntrinsics> = BTreeMap::new();
    for f in frames {
        let mut row = vec![f.frame_id.clone(), f.camera_id.clone()];
        match f.pose {
            Some(p) => row.extend(p.to_record().iter().map(|v| fmt_f64(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), 7)),
        }
        poses.row(&row)?;
        cams.entry(&f.camera_id).or_insert(f.intrinsics);

        let mut kp = CsvOut::create(&dir.join("keypoints").join(format!("{}.csv", f.frame_id)), &["idx", "u", "v"])?;
        for (i, p) in f.keypoints.iter().enumerate() {
            kp.row([i.to_string(), fmt_f64(p.x), fmt_f64(p.y)])?;
        }
        kp.finish()?;

        if let Some(d) = &f.descriptors {
            let header: Vec<String> = std::iter::once("idx".to_owned())
                .chain((0..d.dim()).map(|k| format!("d{k}")))
                .collect();
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            let mut out = CsvOut::create(&dir.join("descriptors").join(format!("{}.csv", f.frame_id)), &header)?;
            for (i, r) in d.rows().enumerate() {
                out.row(std::iter::once(i.to_string()).chain(r.iter().map(|v| fmt_f64(*v))))?;
            }
            out.finish()?;
        }
        if let Some(ids) = &f.point_ids {
            let mut out = CsvOut::create(&dir.join("point_ids").join(format!("{}.csv", f.frame_id)), &["idx", "point_id"])?;
            for (i, id) in ids.iter().enumerate() {
                out.row([i.to_string(), id.map(|v| v.to_string()).unwrap_or_default()])?;
            }
            out.finish()?;
        }
    }
    poses.finish()?;

    let mut intr = CsvOut::create(&dir.join("intrinsics.csv"), &["camera_id", "fx", "fy", "cx", "cy", "width", "height"])?;
    for (id, k) in cams {
        intr.row([
            id.to_owned(),
            fmt_f64(k.fx),
            fmt_f64(k.fy),
            fmt_f64(k.cx),
            fmt_f64(k.cy),
            fmt_f64(k.width),
            fmt_f64(k.height),
        ])?;
    }
    intr.finish()?;

    let with_global: Vec<&&Frame> = frames.iter().filter(|f| f.global_descriptor.is_some()).collect();
    if let Some(first) = with_global.first() {
        let dim = first.global_descriptor.as_ref().map_or(0, Vec::len);
        let header: Vec<String> = std::iter::once("frame_id".to_owned())
            .chain((0..dim).map(|k| format!("g{k}")))
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut out = CsvOut::create(&dir.join("global_descriptors.csv"), &header)?;
        for f in with_global {
            let g = f.global_descriptor.as_ref().expect("filtered");
            out.row(std::iter::once(f.frame_id.clone()).chain(g.iter().map(|v| fmt_f64(*v))))?;
        }
        out.finish()?;
    }
    Ok(())
}

fn write_sequence(dir: &Path, seq: &QuerySequence) -> Result<(), IngestError> {
    let frames: Vec<&Frame> = seq.rigs.iter().flat_map(|r| r.frames.iter()).collect();
    write_frames(dir, &frames)?;
    if seq.rigs.iter().any(|r| !r.is_monocular()) {
        let mut out = CsvOut::create(&dir.join("rig_frames.csv"), &["rig_frame_id", "rig_id", "frame_id"])?;
        for r in &seq.rigs {
            for f in &r.frames {
                out.row([r.rig_frame_id.as_str(), r.rig_id.as_str(), f.frame_id.as_str()])?;
            }
        }
        out.finish()?;
    }
    if let Some(c) = seq.covariance {
        let mut out = CsvOut::create(&dir.join("covariance.csv"), &["c0", "c1", "c2", "c3", "c4", "c5"])?;
        for r in 0..6 {
            out.row((0..6).map(|k| fmt_f64(c[(r, k)])))?;
        }
        out.finish()?;
    }
    Ok(())
}

/// Writes a dataset in the layout read by [`load_dataset`]. Poses and pixel
/// coordinates round-trip bit-exactly.
pub fn save_dataset(ds: &Dataset, root: &Path) -> Result<(), IngestError> {
    let refs: Vec<&Frame> = ds.references.iter().collect();
    write_frames(&root.join("references"), &refs)?;
    match ds.sequences.as_slice() {
        [single] => write_sequence(&root.join("queries"), single)?,
        many => {
            for s in many {
                write_sequence(&root.join("queries").join(&s.sequence_id), s)?;
            }
        }
    }
    let mut extr: BTreeMap<(String, String), Pose> = BTreeMap::new();
    for r in ds.sequences.iter().flat_map(|s| s.rigs.iter()).filter(|r| !r.is_monocular()) {
        for c in &r.cameras {
            extr.insert((r.rig_id.clone(), c.camera_id.clone()), c.extrinsic);
        }
    }
    if !extr.is_empty() {
        let mut out = CsvOut::create(
            &root.join("rig_extrinsics.csv"),
            &["rig_id", "camera_id", "qw", "qx", "qy", "qz", "tx", "ty", "tz"],
        )?;
        for ((rig, cam), p) in extr {
            out.row([rig, cam].into_iter().chain(p.to_record().iter().map(|v| fmt_f64(*v))))?;
        }
        out.finish()?;
    }
    Ok(())
}

/// Reads a `frame_id,qw,qx,qy,qz,tx,ty,tz` table (e.g. ground-truth poses).
pub fn read_pose_table(path: &Path) -> Result<Vec<(String, Pose)>, IngestError> {
    let t = Table::read(path)?;
    t.expect_header(&["frame_id", "qw", "qx", "qy", "qz", "tx", "ty", "tz"])?;
    t.rows
        .iter()
        .map(|(line, row)| {
            let pose = t
                .pose_at(*line, row, 1)?
                .ok_or_else(|| t.malformed(*line, "missing pose"))?;
            Ok((row[0].clone(), pose))
        })
        .collect()
}

pub fn write_pose_table(path: &Path, poses: &[(String, Pose)]) -> Result<(), IngestError> {
    let rows: Vec<(String, Option<Pose>)> = poses.iter().map(|(id, p)| (id.clone(), Some(*p))).collect();
    write_partial_pose_table(path, &rows)
}

/// Like [`read_pose_table`], but blank pose fields read as `None`.
pub fn read_partial_pose_table(path: &Path) -> Result<Vec<(String, Option<Pose>)>, IngestError> {
    let t = Table::read(path)?;
    t.expect_header(&["frame_id", "qw", "qx", "qy", "qz", "tx", "ty", "tz"])?;
    t.rows
        .iter()
        .map(|(line, row)| Ok((row[0].clone(), t.pose_at(*line, row, 1)?)))
        .collect()
}

pub fn write_partial_pose_table(path: &Path, poses: &[(String, Option<Pose>)]) -> Result<(), IngestError> {
    let mut out = CsvOut::create(path, &["frame_id", "qw", "qx", "qy", "qz", "tx", "ty", "tz"])?;
    for (id, p) in poses {
        let fields: Vec<String> = match p {
            Some(p) => p.to_record().iter().map(|v| fmt_f64(*v)).collect(),
            None => vec![String::new(); 7],
        };
        out.row(std::iter::once(id.clone()).chain(fields))?;
    }
    out.finish()
}
