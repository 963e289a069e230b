//! Static skeleton plots: the camera view in the top-left panel plus
//! front, top, and side orthographic views of the same 3D keypoints.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use image::{Rgb, RgbImage};

use bike8d::geometry::project_point;
use bike8d::metrics::load_predictions;
use bike8d::model::{KeypointId, KeypointSet3D, KEYPOINT_COUNT};
use bike8d::synth::read_records;
use bike8d::{canonical_keypoints, repose, CanonicalTemplate, Vec3};

use crate::manifest::RunManifest;
use crate::{path_str, Failure, RunResult};

const PANEL: i64 = 512;

const BACKDROP: Rgb<u8> = Rgb([18, 18, 22]);
const DIVIDER: Rgb<u8> = Rgb([60, 60, 66]);
const EDGE: Rgb<u8> = Rgb([235, 200, 60]);
const POINT: Rgb<u8> = Rgb([90, 180, 250]);
const POINT_HIDDEN: Rgb<u8> = Rgb([70, 85, 105]);

use KeypointId::*;
const EDGES: [(KeypointId, KeypointId); 10] = [
    (GroundRoot, PedalAxle),
    (PedalAxle, Seat),
    (PedalAxle, RearWheelCenter),
    (PedalAxle, SteeringAxis1),
    (SteeringAxis1, SteeringAxis2),
    (SteeringAxis2, LeftHandle),
    (SteeringAxis2, RightHandle),
    (SteeringAxis1, ForwardWheelCentre),
    (PedalAxle, PedalLeft),
    (PedalAxle, PedalRight),
];

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Record file holding the sample
    #[arg(long)]
    pub data: PathBuf,
    /// Sample to draw
    #[arg(long)]
    pub sample_id: String,
    /// PNG to write: a 2x2 grid of 512x512 panels
    #[arg(long)]
    pub out: PathBuf,
    /// Draw this prediction file's pose for the sample instead of the truth
    #[arg(long)]
    pub preds: Option<PathBuf>,
    /// Template JSON; the built-in canonical shape when omitted
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Optional 512x512 image behind the camera-view panel
    #[arg(long)]
    pub background: Option<PathBuf>,
}

/// Top-left corner of one panel in the composed image.
#[derive(Clone, Copy)]
struct Panel {
    x0: i64,
    y0: i64,
}

fn put(img: &mut RgbImage, panel: Panel, x: i64, y: i64, c: Rgb<u8>) {
    if (0..PANEL).contains(&x) && (0..PANEL).contains(&y) {
        img.put_pixel((panel.x0 + x) as u32, (panel.y0 + y) as u32, c);
    }
}

fn draw_line(img: &mut RgbImage, panel: Panel, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    // endpoints far outside the panel would make the walk pointlessly long
    let sane = |p: (f64, f64)| p.0.is_finite() && p.1.is_finite() && p.0.abs() < 1e5 && p.1.abs() < 1e5;
    if !sane(a) || !sane(b) {
        return;
    }
    let (mut x, mut y) = (a.0.round() as i64, a.1.round() as i64);
    let (x1, y1) = (b.0.round() as i64, b.1.round() as i64);
    let dx = (x1 - x).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let dy = -(y1 - y).abs();
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, panel, x, y, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn draw_dot(img: &mut RgbImage, panel: Panel, p: (f64, f64), r: i64, c: Rgb<u8>) {
    if !(p.0.is_finite() && p.1.is_finite() && p.0.abs() < 1e5 && p.1.abs() < 1e5) {
        return;
    }
    let (cx, cy) = (p.0.round() as i64, p.1.round() as i64);
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                put(img, panel, cx + dx, cy + dy, c);
            }
        }
    }
}

fn draw_skeleton(
    img: &mut RgbImage,
    panel: Panel,
    pts: &[Option<(f64, f64)>; KEYPOINT_COUNT],
    visibility: &[bool; KEYPOINT_COUNT],
) {
    for (a, b) in EDGES {
        if let (Some(pa), Some(pb)) = (pts[a.index()], pts[b.index()]) {
            draw_line(img, panel, pa, pb, EDGE);
        }
    }
    for i in 0..KEYPOINT_COUNT {
        if let Some(p) = pts[i] {
            let c = if visibility[i] { POINT } else { POINT_HIDDEN };
            draw_dot(img, panel, p, 3, c);
        }
    }
}

/// Maps keypoints through `axes` and fits the result isotropically into a
/// panel with a fixed margin. Degenerate spreads fall back to unit scale.
fn ortho_points(kp3d: &KeypointSet3D, axes: fn(Vec3) -> (f64, f64)) -> [Option<(f64, f64)>; KEYPOINT_COUNT] {
    const MARGIN: f64 = 48.0;
    let raw: Vec<(f64, f64)> = KeypointId::ALL.iter().map(|&id| axes(kp3d[id])).collect();
    let (mut lo_a, mut hi_a) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lo_b, mut hi_b) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(a, b) in &raw {
        lo_a = lo_a.min(a);
        hi_a = hi_a.max(a);
        lo_b = lo_b.min(b);
        hi_b = hi_b.max(b);
    }
    let spread = (hi_a - lo_a).max(hi_b - lo_b);
    let scale = if spread > 1e-9 {
        (PANEL as f64 - 2.0 * MARGIN) / spread
    } else {
        1.0
    };
    let (mid_a, mid_b) = ((lo_a + hi_a) / 2.0, (lo_b + hi_b) / 2.0);
    std::array::from_fn(|i| {
        let (a, b) = raw[i];
        Some((
            PANEL as f64 / 2.0 + (a - mid_a) * scale,
            PANEL as f64 / 2.0 + (b - mid_b) * scale,
        ))
    })
}

pub fn run(args: RenderArgs) -> RunResult {
    let started = Instant::now();
    let (_, records) = read_records(&args.data)?;
    let rec = records
        .iter()
        .find(|r| r.sample_id == args.sample_id)
        .ok_or_else(|| {
            Failure::Data(format!(
                "unknown sample id {} in {}",
                args.sample_id,
                args.data.display()
            ))
        })?;

    let template = match &args.template {
        Some(p) => crate::load_one_template(p)?,
        None => CanonicalTemplate::default(),
    };
    let (pose, residuals) = match &args.preds {
        Some(p) => {
            let preds = load_predictions(p)?;
            let pr = preds
                .iter()
                .find(|q| q.sample_id == args.sample_id)
                .ok_or_else(|| {
                    Failure::Data(format!(
                        "no prediction for {} in {}",
                        args.sample_id,
                        p.display()
                    ))
                })?;
            (pr.pose, pr.residuals)
        }
        None => (rec.pose, rec.residuals),
    };

    // the truth and a prediction render through the same reconstruction, so
    // equal poses give equal pixels
    let kc = canonical_keypoints(&template, &residuals)?;
    let kp3d = repose(&kc, &pose)?;

    let mut img = RgbImage::from_pixel(2 * PANEL as u32, 2 * PANEL as u32, BACKDROP);

    let camera_panel = Panel { x0: 0, y0: 0 };
    if let Some(bg_path) = &args.background {
        let bg = image::open(bg_path)?.to_rgb8();
        if bg.dimensions() != (PANEL as u32, PANEL as u32) {
            return Err(Failure::Usage(format!(
                "background {} is {}x{}, must be {PANEL}x{PANEL}",
                bg_path.display(),
                bg.width(),
                bg.height()
            )));
        }
        for (x, y, p) in bg.enumerate_pixels() {
            img.put_pixel(x, y, *p);
        }
    }

    // camera view: keypoints behind the image plane stay undrawn
    let projected: [Option<(f64, f64)>; KEYPOINT_COUNT] =
        std::array::from_fn(|i| project_point(&rec.camera, kp3d[KeypointId::ALL[i]]).ok());
    draw_skeleton(&mut img, camera_panel, &projected, &rec.visibility);

    // +X right, +Y down, +Z forward; v grows downward in every panel
    let front = ortho_points(&kp3d, |p| (p.x, p.y));
    let top = ortho_points(&kp3d, |p| (p.x, -p.z));
    let side = ortho_points(&kp3d, |p| (p.z, p.y));
    draw_skeleton(&mut img, Panel { x0: PANEL, y0: 0 }, &front, &rec.visibility);
    draw_skeleton(&mut img, Panel { x0: 0, y0: PANEL }, &top, &rec.visibility);
    draw_skeleton(&mut img, Panel { x0: PANEL, y0: PANEL }, &side, &rec.visibility);

    for i in 0..(2 * PANEL) as u32 {
        for d in 0..2u32 {
            img.put_pixel(i, PANEL as u32 - 1 + d, DIVIDER);
            img.put_pixel(PANEL as u32 - 1 + d, i, DIVIDER);
        }
    }

    img.save(&args.out)?;
    println!(
        "rendered {} to {} ({}x{})",
        args.sample_id,
        args.out.display(),
        img.width(),
        img.height()
    );

    let manifest = RunManifest {
        command: "render",
        version: env!("CARGO_PKG_VERSION"),
        seed: None,
        config: serde_json::json!({
            "sample_id": args.sample_id,
            "preds": args.preds.as_ref().map(path_str),
            "template_path": args.template.as_ref().map(path_str),
            "background": args.background.as_ref().map(path_str),
        }),
        inputs: [
            Some(&args.data),
            args.preds.as_ref(),
            args.template.as_ref(),
            args.background.as_ref(),
        ]
        .into_iter()
        .flatten()
        .map(path_str)
        .collect(),
        outputs: vec![path_str(&args.out)],
        duration_seconds: started.elapsed().as_secs_f64(),
    };
    manifest.write_sidecar(&args.out)
}
