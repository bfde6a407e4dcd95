//! Text parser and writer for the COLMAP-style three-file sparse-model
//! export (`cameras.txt`, `images.txt`, `points3D.txt`).
//!
//! Image lines store world-to-camera extrinsics `(qw qx qy qz, tx ty tz)`;
//! they are converted to camera-to-world poses here, at the boundary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::geometry::{Pose, Rotation3};
use crate::pnp::CameraIntrinsics;
use crate::registration::{FrameKey, ReconFrame, ReconstructionSource, SparseReconstruction};

use super::{FrameNamePattern, IoError, ModelBundle};

fn parse_error(file: &Path, line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse { file: file.to_path_buf(), line, message: message.into() }
}

/// Numbered non-comment lines of a text file (1-based numbering, `#` comment
/// lines and blank lines skipped).
fn content_lines(path: &Path) -> Result<Vec<(usize, String)>, IoError> {
    let text = super::read_text(path)?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.to_string()))
        .filter(|(_, l)| {
            let t = l.trim_start();
            !t.is_empty() && !t.starts_with('#')
        })
        .collect())
}

fn parse_f64(file: &Path, line: usize, token: &str, what: &str) -> Result<f64, IoError> {
    token
        .parse::<f64>()
        .map_err(|_| parse_error(file, line, format!("invalid {what} '{token}'")))
}

fn parse_cameras(path: &Path) -> Result<BTreeMap<u32, CameraIntrinsics>, IoError> {
    let mut cameras = BTreeMap::new();
    for (line_no, line) in content_lines(path)? {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(parse_error(path, line_no, "camera line needs at least 4 fields"));
        }
        let camera_id: u32 = fields[0]
            .parse()
            .map_err(|_| parse_error(path, line_no, format!("invalid camera id '{}'", fields[0])))?;
        let model = fields[1];
        let width: u32 = fields[2]
            .parse()
            .map_err(|_| parse_error(path, line_no, format!("invalid width '{}'", fields[2])))?;
        let height: u32 = fields[3]
            .parse()
            .map_err(|_| parse_error(path, line_no, format!("invalid height '{}'", fields[3])))?;
        let params: Vec<f64> = fields[4..]
            .iter()
            .map(|t| parse_f64(path, line_no, t, "camera parameter"))
            .collect::<Result<_, _>>()?;

        // Pinhole family only; radial coefficients are carried as metadata.
        let (fx, fy, cx, cy, distortion) = match (model, params.len()) {
            ("SIMPLE_PINHOLE", 3) => (params[0], params[0], params[1], params[2], vec![]),
            ("PINHOLE", 4) => (params[0], params[1], params[2], params[3], vec![]),
            ("SIMPLE_RADIAL", 4) => (params[0], params[0], params[1], params[2], vec![params[3]]),
            ("RADIAL", 5) => {
                (params[0], params[0], params[1], params[2], vec![params[3], params[4]])
            }
            ("SIMPLE_PINHOLE" | "PINHOLE" | "SIMPLE_RADIAL" | "RADIAL", n) => {
                return Err(parse_error(
                    path,
                    line_no,
                    format!("camera model {model} given {n} parameters"),
                ));
            }
            _ => {
                return Err(IoError::UnsupportedCameraModel {
                    file: path.to_path_buf(),
                    line: line_no,
                    model: model.to_string(),
                });
            }
        };
        let intrinsics = CameraIntrinsics { fx, fy, cx, cy, width, height, distortion };
        intrinsics
            .validate()
            .map_err(|e| parse_error(path, line_no, e.to_string()))?;
        if cameras.insert(camera_id, intrinsics).is_some() {
            return Err(parse_error(path, line_no, format!("duplicate camera id {camera_id}")));
        }
    }
    Ok(cameras)
}

struct ImageRecord {
    frame_key: FrameKey,
    pose: Pose,
    camera_id: u32,
    raw_extrinsics: ([f64; 4], [f64; 3]),
}

fn parse_images(
    path: &Path,
    source: &ReconstructionSource,
    pattern: &FrameNamePattern,
) -> Result<Vec<ImageRecord>, IoError> {
    // Images come as pairs of lines; the second (2D point observations) is
    // consumed and ignored and may be empty, so blank lines must survive the
    // comment filter here.
    let text = super::read_text(path)?;
    let mut lines: Vec<(usize, String)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.to_string()))
        .filter(|(_, l)| !l.trim_start().starts_with('#'))
        .collect();
    while lines.last().map(|(_, l)| l.trim().is_empty()).unwrap_or(false) {
        lines.pop();
    }

    let mut records = Vec::new();
    let mut iter = lines.iter();
    while let Some((line_no, line)) = iter.next() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 10 {
            return Err(parse_error(path, *line_no, "image line needs at least 10 fields"));
        }
        let qw = parse_f64(path, *line_no, fields[1], "quaternion component")?;
        let qx = parse_f64(path, *line_no, fields[2], "quaternion component")?;
        let qy = parse_f64(path, *line_no, fields[3], "quaternion component")?;
        let qz = parse_f64(path, *line_no, fields[4], "quaternion component")?;
        let tx = parse_f64(path, *line_no, fields[5], "translation component")?;
        let ty = parse_f64(path, *line_no, fields[6], "translation component")?;
        let tz = parse_f64(path, *line_no, fields[7], "translation component")?;
        let camera_id: u32 = fields[8]
            .parse()
            .map_err(|_| parse_error(path, *line_no, format!("invalid camera id '{}'", fields[8])))?;
        let name = fields[9..].join(" ");

        let rotation = Rotation3::from_quaternion_wxyz(qw, qx, qy, qz).map_err(|e| {
            IoError::Convention { file: path.to_path_buf(), line: *line_no, message: e.to_string() }
        })?;
        let pose = Pose::from_world_to_camera(rotation, Vector3::new(tx, ty, tz));
        if !pose.is_finite() {
            return Err(parse_error(path, *line_no, "non-finite pose"));
        }

        let (video_prefix, frame_id) = pattern.parse(&name).ok_or_else(|| {
            parse_error(path, *line_no, format!("image name '{name}' does not yield a frame id"))
        })?;
        let video_id = if !video_prefix.is_empty() {
            video_prefix
        } else {
            match source {
                ReconstructionSource::Video { video_id } => video_id.clone(),
                ReconstructionSource::ScanMerge { .. } => {
                    return Err(parse_error(
                        path,
                        *line_no,
                        format!("image name '{name}' carries no video prefix in a scan-merge model"),
                    ));
                }
            }
        };

        records.push(ImageRecord {
            frame_key: FrameKey::new(video_id, frame_id),
            pose,
            camera_id,
            raw_extrinsics: ([qw, qx, qy, qz], [tx, ty, tz]),
        });

        // Consume the observations line; it is absent only at EOF.
        iter.next();
    }
    Ok(records)
}

fn parse_points(path: &Path) -> Result<Vec<Vector3<f64>>, IoError> {
    let mut points = Vec::new();
    for (line_no, line) in content_lines(path)? {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 8 {
            return Err(parse_error(path, line_no, "point line needs at least 8 fields"));
        }
        let x = parse_f64(path, line_no, fields[1], "coordinate")?;
        let y = parse_f64(path, line_no, fields[2], "coordinate")?;
        let z = parse_f64(path, line_no, fields[3], "coordinate")?;
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(parse_error(path, line_no, "non-finite point"));
        }
        points.push(Vector3::new(x, y, z));
    }
    Ok(points)
}

/// Parses a sparse-model directory (`cameras.txt`, `images.txt`,
/// `points3D.txt`) into a [`ModelBundle`]. `source` tags the reconstruction
/// and supplies the video id for image names without a video prefix.
pub fn parse_sparse_model(
    dir: &Path,
    source: ReconstructionSource,
    pattern: &FrameNamePattern,
) -> Result<ModelBundle, IoError> {
    let cameras = parse_cameras(&dir.join("cameras.txt"))?;
    let images_path = dir.join("images.txt");
    let images = parse_images(&images_path, &source, pattern)?;
    let points3d = parse_points(&dir.join("points3D.txt"))?;

    let mut reconstruction = SparseReconstruction::new(source);
    reconstruction.points3d = points3d;
    for record in images {
        if !cameras.contains_key(&record.camera_id) {
            return Err(parse_error(
                &images_path,
                0,
                format!(
                    "frame {}/{} references unknown camera {}",
                    record.frame_key.video_id, record.frame_key.frame_id, record.camera_id
                ),
            ));
        }
        let frame = ReconFrame {
            pose: record.pose,
            camera_id: record.camera_id,
            raw_extrinsics: Some(record.raw_extrinsics),
        };
        if reconstruction.frames.insert(record.frame_key.clone(), frame).is_some() {
            return Err(parse_error(
                &images_path,
                0,
                format!(
                    "duplicate frame {}/{}",
                    record.frame_key.video_id, record.frame_key.frame_id
                ),
            ));
        }
    }
    Ok(ModelBundle { reconstruction, intrinsics: cameras })
}

/// Writes a bundle back out in the three-file text format. Shortest
/// round-trip float formatting keeps parse -> serialize -> parse exact.
pub fn serialize_sparse_model(dir: &Path, bundle: &ModelBundle) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;

    let mut cameras = String::from("# CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]\n");
    for (id, k) in &bundle.intrinsics {
        match k.distortion.len() {
            0 => {
                let _ = writeln!(cameras, "{id} PINHOLE {} {} {} {} {} {}", k.width, k.height, k.fx, k.fy, k.cx, k.cy);
            }
            1 => {
                let _ = writeln!(cameras, "{id} SIMPLE_RADIAL {} {} {} {} {} {}", k.width, k.height, k.fx, k.cx, k.cy, k.distortion[0]);
            }
            _ => {
                let _ = writeln!(
                    cameras,
                    "{id} RADIAL {} {} {} {} {} {} {}",
                    k.width, k.height, k.fx, k.cx, k.cy, k.distortion[0], k.distortion[1]
                );
            }
        }
    }
    let cameras_path = dir.join("cameras.txt");
    std::fs::write(&cameras_path, cameras).map_err(|e| IoError::io(&cameras_path, e))?;

    let mut images = String::from("# IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n");
    for (idx, (key, frame)) in bundle.reconstruction.frames.iter().enumerate() {
        let ([qw, qx, qy, qz], [t0, t1, t2]) = frame.raw_extrinsics.unwrap_or_else(|| {
            let (r, t) = frame.pose.to_world_to_camera();
            (r.quaternion_wxyz(), [t.x, t.y, t.z])
        });
        let t = Vector3::new(t0, t1, t2);
        let name = format!("{}_{:06}.png", key.video_id, key.frame_id);
        let _ = writeln!(
            images,
            "{} {qw} {qx} {qy} {qz} {} {} {} {} {name}",
            idx + 1,
            t.x,
            t.y,
            t.z,
            frame.camera_id
        );
        images.push('\n'); // empty observations line
    }
    let images_path = dir.join("images.txt");
    std::fs::write(&images_path, images).map_err(|e| IoError::io(&images_path, e))?;

    let mut points = String::from("# POINT3D_ID X Y Z R G B ERROR TRACK[]\n");
    for (idx, p) in bundle.reconstruction.points3d.iter().enumerate() {
        let _ = writeln!(points, "{} {} {} {} 128 128 128 0", idx + 1, p.x, p.y, p.z);
    }
    let points_path = dir.join("points3D.txt");
    std::fs::write(&points_path, points).map_err(|e| IoError::io(&points_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn write_minimal_model(dir: &Path, images_body: &str) {
        std::fs::write(
            dir.join("cameras.txt"),
            "# comment\n1 PINHOLE 640 480 600 600 320 240\n",
        )
        .unwrap();
        std::fs::write(dir.join("images.txt"), images_body).unwrap();
        std::fs::write(dir.join("points3D.txt"), "# empty\n").unwrap();
    }

    #[test]
    fn minimal_fixture_converts_to_camera_center() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal_model(dir.path(), "1 1 0 0 0 1 2 3 1 v0_000000.png\n\n");
        let bundle = parse_sparse_model(
            dir.path(),
            ReconstructionSource::Video { video_id: "v0".into() },
            &FrameNamePattern::default(),
        )
        .unwrap();
        assert_eq!(bundle.reconstruction.frames.len(), 1);
        let frame = &bundle.reconstruction.frames[&FrameKey::new("v0", 0)];
        // Identity rotation, t = (1,2,3) in world-to-camera means the camera
        // sits at (-1,-2,-3).
        assert_relative_eq!(frame.pose.camera_center(), Vector3::new(-1.0, -2.0, -3.0));
    }

    #[test]
    fn comment_lines_are_skipped_everywhere() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal_model(
            dir.path(),
            "# leading comment\n1 1 0 0 0 1 2 3 1 v0_000000.png\n# interleaved\n\n",
        );
        let with_comments = parse_sparse_model(
            dir.path(),
            ReconstructionSource::Video { video_id: "v0".into() },
            &FrameNamePattern::default(),
        )
        .unwrap();
        assert_eq!(with_comments.reconstruction.frames.len(), 1);
    }

    #[test]
    fn bad_quaternion_is_a_convention_error() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal_model(dir.path(), "1 0.5 0 0 0 1 2 3 1 v0_000000.png\n\n");
        let err = parse_sparse_model(
            dir.path(),
            ReconstructionSource::Video { video_id: "v0".into() },
            &FrameNamePattern::default(),
        )
        .unwrap_err();
        assert!(matches!(err, IoError::Convention { line: 1, .. }), "{err}");
    }

    #[test]
    fn unknown_camera_model_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("cameras.txt"), "1 OPENCV_FISHEYE 640 480 1 1 1 1\n").unwrap();
        std::fs::write(dir.path().join("images.txt"), "").unwrap();
        std::fs::write(dir.path().join("points3D.txt"), "").unwrap();
        let err = parse_sparse_model(
            dir.path(),
            ReconstructionSource::Video { video_id: "v0".into() },
            &FrameNamePattern::default(),
        )
        .unwrap_err();
        assert!(matches!(err, IoError::UnsupportedCameraModel { .. }));
    }

    #[test]
    fn unknown_camera_reference_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal_model(dir.path(), "1 1 0 0 0 1 2 3 9 v0_000000.png\n\n");
        let err = parse_sparse_model(
            dir.path(),
            ReconstructionSource::Video { video_id: "v0".into() },
            &FrameNamePattern::default(),
        )
        .unwrap_err();
        assert!(matches!(err, IoError::Parse { .. }));
    }

    #[test]
    fn parse_error_carries_line_number() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal_model(dir.path(), "# header\n1 1 0 0 0 oops 2 3 1 v0_000000.png\n\n");
        match parse_sparse_model(
            dir.path(),
            ReconstructionSource::Video { video_id: "v0".into() },
            &FrameNamePattern::default(),
        ) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
