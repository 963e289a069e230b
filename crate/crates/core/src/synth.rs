//! Synthetic ground-truth dataset generation and annotation record I/O.
//!
//! Poses are drawn uniformly from a bounded 8D domain, shapes from clamped
//! per-keypoint Gaussian residuals. Each sample is posed, projected through
//! the camera, boxed, and cropped; the result is one [`AnnotationRecord`].
//! Records are stored as line-delimited JSON behind a single header line
//! carrying the schema version, so files are diffable, streamable, and
//! byte-identical across runs with the same seed.

use std::io::{BufRead, BufReader, BufWriter, Write as IoWrite};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::geometry::{
    apply_crop, crop_from_box, project_point, wrap_signed_deg, BBox2D, Camera, GeometryError,
};
use crate::model::{
    canonical_keypoints, derive_bbox2d, project_keypoints, repose, CanonicalTemplate, KeypointId,
    ModelError, Pose8D, ResidualSet, KEYPOINT_COUNT, RESIDUAL_NORM_BOUND,
};
use crate::Vec3;

/// Side length of the cropped image frame, in pixels.
pub const CROP_SIZE: f64 = 512.0;

/// Version tag written to and required from record file headers.
pub const SCHEMA_VERSION: u32 = 1;

/// Pose draws per sample before the generator gives up on a config whose
/// domain keeps the root off-screen.
const RESAMPLE_BUDGET: usize = 1000;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("sample {index}: no in-view pose found in {RESAMPLE_BUDGET} draws")]
    ResampleBudgetExhausted { index: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unsupported schema version {found}, expected {SCHEMA_VERSION}")]
    UnsupportedSchema { found: u32 },
    #[error("file is empty, expected a header line")]
    MissingHeader,
}

/// Closed numeric range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Interval { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn midpoint(&self) -> f64 {
        (self.min + self.max) / 2.0
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }
}

impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.min, self.max].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [min, max] = <[f64; 2]>::deserialize(d)?;
        Ok(Interval { min, max })
    }
}

/// Per-parameter pose bounds, in degrees and meters.
///
/// `theta_p` and `theta_y` are periodic and sampled half-open; the rest are
/// closed intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamDomain {
    pub theta_p: Interval,
    pub theta_s: Interval,
    pub theta_x: Interval,
    pub theta_y: Interval,
    pub theta_z: Interval,
    pub t_x: Interval,
    pub t_y: Interval,
    pub t_z: Interval,
}

impl Default for ParamDomain {
    fn default() -> Self {
        ParamDomain {
            theta_p: Interval::new(-180.0, 180.0),
            theta_s: Interval::new(-90.0, 90.0),
            theta_x: Interval::new(-5.0, 5.0),
            theta_y: Interval::new(-180.0, 180.0),
            theta_z: Interval::new(-5.0, 5.0),
            t_x: Interval::new(-1.0, 1.0),
            t_y: Interval::new(-0.5, 0.5),
            t_z: Interval::new(-5.0, 2.0),
        }
    }
}

impl ParamDomain {
    fn intervals(&self) -> [(&'static str, Interval); 8] {
        [
            ("theta_p", self.theta_p),
            ("theta_s", self.theta_s),
            ("theta_x", self.theta_x),
            ("theta_y", self.theta_y),
            ("theta_z", self.theta_z),
            ("t_x", self.t_x),
            ("t_y", self.t_y),
            ("t_z", self.t_z),
        ]
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        for (name, iv) in self.intervals() {
            if !(iv.min.is_finite() && iv.max.is_finite() && iv.min < iv.max) {
                return Err(DatasetError::Config(format!(
                    "domain for {name} must satisfy min < max, got [{}, {}]",
                    iv.min, iv.max
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, pose: &Pose8D) -> bool {
        self.theta_p.contains(pose.theta_p)
            && self.theta_s.contains(pose.theta_s)
            && self.theta_x.contains(pose.theta_x)
            && self.theta_y.contains(pose.theta_y)
            && self.theta_z.contains(pose.theta_z)
            && self.t_x.contains(pose.t.x)
            && self.t_y.contains(pose.t.y)
            && self.t_z.contains(pose.t.z)
    }

    /// Projects a pose into the domain: periodic angles are wrapped into
    /// [-180, 180) first, everything is then clamped.
    pub fn project(&self, pose: &Pose8D) -> Pose8D {
        Pose8D {
            theta_p: self.theta_p.clamp(wrap_signed_deg(pose.theta_p)),
            theta_s: self.theta_s.clamp(pose.theta_s),
            theta_x: self.theta_x.clamp(pose.theta_x),
            theta_y: self.theta_y.clamp(wrap_signed_deg(pose.theta_y)),
            theta_z: self.theta_z.clamp(pose.theta_z),
            t: Vec3::new(
                self.t_x.clamp(pose.t.x),
                self.t_y.clamp(pose.t.y),
                self.t_z.clamp(pose.t.z),
            ),
        }
    }
}

/// Which split a sample landed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// Generator settings. Defaults reproduce the full-scale protocol:
/// 23 templates x 2500 samples, split 75/25.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_templates: usize,
    pub samples_per_template: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub domain: ParamDomain,
    pub residual_sigma: f64,
    pub occlusion_dropout: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_templates: 23,
            samples_per_template: 2500,
            train_fraction: 0.75,
            seed: 0,
            domain: ParamDomain::default(),
            residual_sigma: 0.02,
            occlusion_dropout: 0.0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_templates == 0 || self.samples_per_template == 0 {
            return Err(DatasetError::Config(
                "n_templates and samples_per_template must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(DatasetError::Config(format!(
                "train_fraction must be in [0, 1], got {}",
                self.train_fraction
            )));
        }
        if !(self.residual_sigma.is_finite() && self.residual_sigma >= 0.0) {
            return Err(DatasetError::Config(format!(
                "residual_sigma must be non-negative, got {}",
                self.residual_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.occlusion_dropout) {
            return Err(DatasetError::Config(format!(
                "occlusion_dropout must be in [0, 1], got {}",
                self.occlusion_dropout
            )));
        }
        self.domain.validate()
    }

    pub fn total_samples(&self) -> usize {
        self.n_templates * self.samples_per_template
    }

    /// (train, val) sizes; the train side rounds half up.
    pub fn split_counts(&self) -> (usize, usize) {
        let total = self.total_samples();
        let train = (self.train_fraction * total as f64).round() as usize;
        let train = train.min(total);
        (train, total - train)
    }
}

/// One generated sample: ground-truth pose, shape, and derived views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub template_id: String,
    pub split: Split,
    pub pose: Pose8D,
    pub residuals: ResidualSet,
    #[serde(rename = "kp3d")]
    pub keypoints_3d: crate::model::KeypointSet3D,
    #[serde(rename = "kp2d_i")]
    pub keypoints_2d_i: [[f64; 2]; KEYPOINT_COUNT],
    #[serde(rename = "kp2d_ib")]
    pub keypoints_2d_ib: [[f64; 2]; KEYPOINT_COUNT],
    #[serde(rename = "vis")]
    pub visibility: [bool; KEYPOINT_COUNT],
    pub bbox: BBox2D,
    pub camera: Camera,
}

/// First line of a record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub camera: Camera,
    pub template_ids: Vec<String>,
}

/// SplitMix64 mix, used to derive independent per-record seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for stream `index` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1))
}

/// Draws a pose uniformly from the domain. Periodic angles use half-open
/// ranges so -180 and 180 are never both drawn; the rest are closed.
pub fn sample_pose<R: Rng + ?Sized>(domain: &ParamDomain, rng: &mut R) -> Pose8D {
    let theta_p = rng.random_range(domain.theta_p.min..domain.theta_p.max);
    let theta_s = rng.random_range(domain.theta_s.min..=domain.theta_s.max);
    let theta_x = rng.random_range(domain.theta_x.min..=domain.theta_x.max);
    let theta_y = rng.random_range(domain.theta_y.min..domain.theta_y.max);
    let theta_z = rng.random_range(domain.theta_z.min..=domain.theta_z.max);
    let t = Vec3::new(
        rng.random_range(domain.t_x.min..=domain.t_x.max),
        rng.random_range(domain.t_y.min..=domain.t_y.max),
        rng.random_range(domain.t_z.min..=domain.t_z.max),
    );
    Pose8D {
        theta_p,
        theta_s,
        theta_x,
        theta_y,
        theta_z,
        t,
    }
}

/// Draws iid Gaussian shape residuals, radially clamped to `bound`.
///
/// `ground_root` keeps a zero residual: it is the pose anchor, and shape
/// offsets on it would alias pure translation.
pub fn sample_residuals<R: Rng + ?Sized>(sigma: f64, bound: f64, rng: &mut R) -> ResidualSet {
    let normal = Normal::new(0.0, sigma).expect("sigma must be non-negative");
    let mut out = ResidualSet::ZERO;
    for id in KeypointId::ALL {
        if id == KeypointId::GroundRoot {
            continue;
        }
        let mut v = Vec3::new(
            normal.sample(rng),
            normal.sample(rng),
            normal.sample(rng),
        );
        let norm = v.norm();
        if norm > bound {
            v = v * (bound / norm);
        }
        out[id] = v;
    }
    out
}

/// Streaming generator over all samples of a config.
pub struct DatasetGenerator {
    cfg: DatasetConfig,
    templates: Vec<CanonicalTemplate>,
    camera: Camera,
    split_of: Vec<Split>,
    next: usize,
}

/// Builds the generator for `cfg`, cycling through `templates` when fewer
/// distinct templates than `cfg.n_templates` are supplied.
pub fn generate_dataset(
    cfg: &DatasetConfig,
    templates: &[CanonicalTemplate],
    camera: &Camera,
) -> Result<DatasetGenerator, DatasetError> {
    cfg.validate()?;
    if templates.is_empty() {
        return Err(DatasetError::Config("at least one template required".into()));
    }
    for t in templates {
        t.validate()?;
    }

    let total = cfg.total_samples();
    let (train_count, _) = cfg.split_counts();
    let mut order: Vec<usize> = (0..total).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX));
    order.shuffle(&mut split_rng);
    let mut split_of = vec![Split::Val; total];
    for &i in &order[..train_count] {
        split_of[i] = Split::Train;
    }

    Ok(DatasetGenerator {
        cfg: cfg.clone(),
        templates: templates.to_vec(),
        camera: *camera,
        split_of,
        next: 0,
    })
}

impl DatasetGenerator {
    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            schema_version: SCHEMA_VERSION,
            camera: self.camera,
            template_ids: (0..self.cfg.n_templates)
                .map(|i| format!("template_{i:03}"))
                .collect(),
        }
    }

    pub fn total(&self) -> usize {
        self.cfg.total_samples()
    }

    fn build_record(&self, index: usize) -> Result<AnnotationRecord, DatasetError> {
        let template_idx = index / self.cfg.samples_per_template;
        let template = &self.templates[template_idx % self.templates.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, index as u64));

        let residuals = sample_residuals(self.cfg.residual_sigma, RESIDUAL_NORM_BOUND, &mut rng);
        let kc = canonical_keypoints(template, &residuals)?;

        let mut found = None;
        for _ in 0..RESAMPLE_BUDGET {
            let pose = sample_pose(&self.cfg.domain, &mut rng);
            // the reposed root is exactly pose.t, so in-view filtering only
            // needs the translation
            let Ok((u, v)) = project_point(&self.camera, pose.t) else {
                continue;
            };
            let (w, h) = (self.camera.width as f64, self.camera.height as f64);
            if !(0.0..=w).contains(&u) || !(0.0..=h).contains(&v) {
                continue;
            }
            let keypoints_3d = repose(&kc, &pose)?;
            let Ok(keypoints_2d_i) = project_keypoints(&self.camera, &keypoints_3d) else {
                continue;
            };
            let Ok(bbox) = derive_bbox2d(&self.camera, template, &keypoints_3d) else {
                continue;
            };
            found = Some((pose, keypoints_3d, keypoints_2d_i, bbox));
            break;
        }
        let Some((pose, keypoints_3d, keypoints_2d_i, bbox)) = found else {
            return Err(DatasetError::ResampleBudgetExhausted { index });
        };

        let crop = crop_from_box(&bbox, CROP_SIZE)?;
        let keypoints_2d_ib = std::array::from_fn(|i| {
            let (u, v) = apply_crop(&crop, (keypoints_2d_i[i][0], keypoints_2d_i[i][1]));
            [u, v]
        });

        let mut visibility = [true; KEYPOINT_COUNT];
        for v in visibility.iter_mut() {
            *v = !rng.random_bool(self.cfg.occlusion_dropout);
        }

        Ok(AnnotationRecord {
            sample_id: format!("s{index:06}"),
            template_id: format!("template_{template_idx:03}"),
            split: self.split_of[index],
            pose,
            residuals,
            keypoints_3d,
            keypoints_2d_i,
            keypoints_2d_ib,
            visibility,
            bbox,
            camera: self.camera,
        })
    }
}

impl Iterator for DatasetGenerator {
    type Item = Result<AnnotationRecord, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.total() {
            return None;
        }
        let rec = self.build_record(self.next);
        self.next += 1;
        Some(rec)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.total() - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for DatasetGenerator {}

/// Incremental line-delimited record writer.
pub struct RecordWriter<W: IoWrite> {
    out: BufWriter<W>,
}

impl RecordWriter<std::fs::File> {
    pub fn create(path: &Path, header: &DatasetHeader) -> Result<Self, DatasetError> {
        Self::from_writer(std::fs::File::create(path)?, header)
    }
}

impl<W: IoWrite> RecordWriter<W> {
    pub fn from_writer(w: W, header: &DatasetHeader) -> Result<Self, DatasetError> {
        let mut out = BufWriter::new(w);
        serde_json::to_writer(&mut out, header).map_err(io_err)?;
        out.write_all(b"\n")?;
        Ok(RecordWriter { out })
    }

    pub fn write(&mut self, record: &AnnotationRecord) -> Result<(), DatasetError> {
        serde_json::to_writer(&mut self.out, record).map_err(io_err)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), DatasetError> {
        self.out.flush()?;
        Ok(())
    }
}

fn io_err(e: serde_json::Error) -> DatasetError {
    DatasetError::Io(e.into())
}

/// Writes a header and records to `path`, one JSON document per line.
pub fn write_records<'a>(
    path: &Path,
    header: &DatasetHeader,
    records: impl IntoIterator<Item = &'a AnnotationRecord>,
) -> Result<(), DatasetError> {
    let mut w = RecordWriter::create(path, header)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

/// Reads a record file back. Parse failures report the 1-based line number;
/// serde's message names any missing or malformed field.
pub fn read_records(path: &Path) -> Result<(DatasetHeader, Vec<AnnotationRecord>), DatasetError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines.next().ok_or(DatasetError::MissingHeader)??;
    let header: DatasetHeader =
        serde_json::from_str(&header_line).map_err(|e| DatasetError::Malformed {
            line: 1,
            message: e.to_string(),
        })?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(DatasetError::UnsupportedSchema {
            found: header.schema_version,
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
                line: i + 2,
                message: e.to_string(),
            })?;
        records.push(rec);
    }
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::KeypointSet3D;

    fn small_cfg() -> DatasetConfig {
        DatasetConfig {
            n_templates: 2,
            samples_per_template: 6,
            seed: 7,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn full_scale_split_counts() {
        let cfg = DatasetConfig::default();
        assert_eq!(cfg.total_samples(), 57_500);
        assert_eq!(cfg.split_counts(), (43_125, 14_375));
    }

    #[test]
    fn split_size_rounds_half_up() {
        let cfg = DatasetConfig {
            n_templates: 1,
            samples_per_template: 10,
            train_fraction: 0.25,
            ..DatasetConfig::default()
        };
        // 2.5 -> 3
        assert_eq!(cfg.split_counts(), (3, 7));
    }

    #[test]
    fn sampled_poses_stay_in_domain() {
        let domain = ParamDomain::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = sample_pose(&domain, &mut rng);
            assert!(domain.contains(&p));
            assert!(p.theta_p < 180.0 && p.theta_y < 180.0);
        }
    }

    #[test]
    fn residuals_respect_bound_and_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let r = sample_residuals(0.5, RESIDUAL_NORM_BOUND, &mut rng);
            assert!(r.max_norm() <= RESIDUAL_NORM_BOUND + 1e-12);
            assert_eq!(r[KeypointId::GroundRoot], Vec3::ZERO);
        }
        let zero = sample_residuals(0.0, RESIDUAL_NORM_BOUND, &mut rng);
        assert_eq!(zero, ResidualSet::ZERO);
    }

    #[test]
    fn records_satisfy_projection_and_crop_consistency() {
        let cfg = small_cfg();
        let template = CanonicalTemplate::default();
        let camera = Camera::default();
        let records: Vec<_> = generate_dataset(&cfg, &[template.clone()], &camera)
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(records.len(), 12);

        let mut ids = std::collections::BTreeSet::new();
        for rec in &records {
            assert!(ids.insert(rec.sample_id.clone()), "duplicate sample id");

            // stored 3D keypoints reproduce from template + residuals + pose
            let kc = canonical_keypoints(&template, &rec.residuals).unwrap();
            let k3d = repose(&kc, &rec.pose).unwrap();
            assert_eq!(k3d, rec.keypoints_3d);
            assert_eq!(rec.keypoints_3d[KeypointId::GroundRoot], rec.pose.t);

            // stored projections match re-projection
            let px = project_keypoints(&camera, &rec.keypoints_3d).unwrap();
            let crop = crop_from_box(&rec.bbox, CROP_SIZE).unwrap();
            for i in 0..KEYPOINT_COUNT {
                assert!((px[i][0] - rec.keypoints_2d_i[i][0]).abs() < 1e-6);
                assert!((px[i][1] - rec.keypoints_2d_i[i][1]).abs() < 1e-6);
                let (ub, vb) = apply_crop(&crop, (px[i][0], px[i][1]));
                assert!((ub - rec.keypoints_2d_ib[i][0]).abs() < 1e-6);
                assert!((vb - rec.keypoints_2d_ib[i][1]).abs() < 1e-6);
            }
            rec.bbox.validate().unwrap();
        }

        let train = records.iter().filter(|r| r.split == Split::Train).count();
        assert_eq!(train, cfg.split_counts().0);
    }

    #[test]
    fn file_round_trip_is_lossless() {
        let cfg = small_cfg();
        let camera = Camera::default();
        let gen = generate_dataset(&cfg, &[CanonicalTemplate::default()], &camera).unwrap();
        let header = gen.header();
        let records: Vec<_> = gen.collect::<Result<_, _>>().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        write_records(&path, &header, &records).unwrap();
        let (header_back, records_back) = read_records(&path).unwrap();
        assert_eq!(header_back, header);
        assert_eq!(records_back, records);
    }

    #[test]
    fn generation_is_byte_identical_per_seed() {
        let cfg = small_cfg();
        let camera = Camera::default();
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        for name in ["a.jsonl", "b.jsonl"] {
            let gen = generate_dataset(&cfg, &[CanonicalTemplate::default()], &camera).unwrap();
            let header = gen.header();
            let records: Vec<_> = gen.collect::<Result<_, _>>().unwrap();
            let path = dir.path().join(name);
            write_records(&path, &header, &records).unwrap();
            bytes.push(std::fs::read(path).unwrap());
        }
        assert_eq!(bytes[0], bytes[1]);

        let mut other_cfg = cfg.clone();
        other_cfg.seed += 1;
        let gen = generate_dataset(&other_cfg, &[CanonicalTemplate::default()], &camera).unwrap();
        let header = gen.header();
        let records: Vec<_> = gen.collect::<Result<_, _>>().unwrap();
        let path = dir.path().join("c.jsonl");
        write_records(&path, &header, &records).unwrap();
        assert_ne!(bytes[0], std::fs::read(path).unwrap());
    }

    #[test]
    fn reader_reports_line_numbers_and_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");

        std::fs::write(
            &path,
            "{\"schema_version\":1,\"camera\":{\"position\":[0,-0.75,-12],\"fx\":1000.0,\"fy\":1000.0,\"cx\":256.0,\"cy\":256.0,\"width\":512,\"height\":512},\"template_ids\":[]}\nnot json\n",
        )
        .unwrap();
        match read_records(&path).unwrap_err() {
            DatasetError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }

        std::fs::write(&path, "{\"schema_version\":99,\"camera\":{\"position\":[0,-0.75,-12],\"fx\":1000.0,\"fy\":1000.0,\"cx\":256.0,\"cy\":256.0,\"width\":512,\"height\":512},\"template_ids\":[]}\n").unwrap();
        assert!(matches!(
            read_records(&path).unwrap_err(),
            DatasetError::UnsupportedSchema { found: 99 }
        ));
    }

    #[test]
    fn record_field_names_are_stable() {
        let cfg = DatasetConfig {
            n_templates: 1,
            samples_per_template: 1,
            ..DatasetConfig::default()
        };
        let rec = generate_dataset(&cfg, &[CanonicalTemplate::default()], &Camera::default())
            .unwrap()
            .next()
            .unwrap()
            .unwrap();
        let json = serde_json::to_value(&rec).unwrap();
        for field in [
            "sample_id",
            "template_id",
            "split",
            "pose",
            "residuals",
            "kp3d",
            "kp2d_i",
            "kp2d_ib",
            "vis",
            "bbox",
            "camera",
        ] {
            assert!(json.get(field).is_some(), "missing field {field}");
        }
        assert_eq!(json.as_object().unwrap().len(), 11);
        assert!(json["pose"].get("tx").is_some());
    }

    #[test]
    fn domain_projection_wraps_and_clamps() {
        let domain = ParamDomain::default();
        let p = Pose8D {
            theta_p: 190.0,
            theta_s: 95.0,
            theta_y: -181.0,
            t: Vec3::new(2.0, 0.0, -7.0),
            ..Pose8D::IDENTITY
        };
        let q = domain.project(&p);
        assert_eq!(q.theta_p, -170.0);
        assert_eq!(q.theta_s, 90.0);
        assert_eq!(q.theta_y, 179.0);
        assert_eq!(q.t.x, 1.0);
        assert_eq!(q.t.z, -5.0);
        assert!(domain.contains(&q));
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut cfg = DatasetConfig::default();
        cfg.train_fraction = 1.5;
        assert!(cfg.validate().is_err());
        cfg = DatasetConfig::default();
        cfg.n_templates = 0;
        assert!(cfg.validate().is_err());
        cfg = DatasetConfig::default();
        cfg.domain.t_z = Interval::new(2.0, -5.0);
        assert!(cfg.validate().is_err());
        assert!(generate_dataset(&cfg, &[CanonicalTemplate::default()], &Camera::default()).is_err());
        let ok = DatasetConfig::default();
        assert!(generate_dataset(&ok, &[], &Camera::default()).is_err());
    }

    #[test]
    fn keypoint_set_serializes_as_coordinate_rows() {
        let k = KeypointSet3D([Vec3::new(1.0, 2.0, 3.0); KEYPOINT_COUNT]);
        let json = serde_json::to_value(k).unwrap();
        assert_eq!(json[0], serde_json::json!([1.0, 2.0, 3.0]));
        assert_eq!(json.as_array().unwrap().len(), KEYPOINT_COUNT);
    }
}
