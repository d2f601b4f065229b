//! File formats: KITTI-style binary point clouds, colored ASCII PLY, and a
//! compact range-image container.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Point3, PointCloud, ProjectionModel, RangeImage};
use crate::error::{Error, Result};

/// Reads a KITTI-style flat binary cloud: little-endian f32, four per point
/// `(x, y, z, intensity)`; intensity is ignored.
pub fn read_kitti_bin(path: &Path) -> Result<PointCloud> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 16 != 0 {
        return Err(Error::Format(format!(
            "{}: length {} is not a multiple of 16 bytes",
            path.display(),
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for chunk in bytes.chunks_exact(16) {
        let x = f32::from_le_bytes(chunk[0..4].try_into().unwrap()) as f64;
        let y = f32::from_le_bytes(chunk[4..8].try_into().unwrap()) as f64;
        let z = f32::from_le_bytes(chunk[8..12].try_into().unwrap()) as f64;
        points.push([x, y, z]);
    }
    PointCloud::new(points)
}

/// Writes a KITTI-style binary cloud with zero intensity.
pub fn write_kitti_bin(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in cloud.points() {
        for v in p {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        w.write_all(&0f32.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes an ASCII PLY with per-vertex red/green/blue.
pub fn write_ply(path: &Path, points: &[Point3], colors: &[[u8; 3]]) -> Result<()> {
    if points.len() != colors.len() {
        return Err(Error::shape("PLY points and colors must align"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    writeln!(w, "property uchar red")?;
    writeln!(w, "property uchar green")?;
    writeln!(w, "property uchar blue")?;
    writeln!(w, "end_header")?;
    for (p, c) in points.iter().zip(colors.iter()) {
        writeln!(
            w,
            "{} {} {} {} {} {}",
            p[0] as f32, p[1] as f32, p[2] as f32, c[0], c[1], c[2]
        )?;
    }
    w.flush()?;
    Ok(())
}

const RANGE_IMAGE_MAGIC: &[u8; 4] = b"LRRI";

/// Writes a range image: magic, H, W (u32 LE), elevation bounds and invalid
/// depth (f64 LE), depths (f64 LE row-major), then one validity byte per cell.
pub fn write_range_image(path: &Path, image: &RangeImage) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(RANGE_IMAGE_MAGIC)?;
    w.write_all(&(image.height() as u32).to_le_bytes())?;
    w.write_all(&(image.width() as u32).to_le_bytes())?;
    w.write_all(&image.model.elevation_min.to_le_bytes())?;
    w.write_all(&image.model.elevation_max.to_le_bytes())?;
    w.write_all(&image.model.invalid_depth.to_le_bytes())?;
    for &d in image.depth_data() {
        w.write_all(&d.to_le_bytes())?;
    }
    for &v in image.valid_data() {
        w.write_all(&[v as u8])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_range_image(path: &Path) -> Result<RangeImage> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != RANGE_IMAGE_MAGIC {
        return Err(Error::Format("bad range-image magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let height = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let width = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let elevation_min = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let elevation_max = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let invalid_depth = f64::from_le_bytes(b8);
    let mut model = ProjectionModel::new(height, width, elevation_min, elevation_max)?;
    model.invalid_depth = invalid_depth;
    let n = height * width;
    let mut depth = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        depth.push(f64::from_le_bytes(b8));
    }
    let mut valid = Vec::with_capacity(n);
    let mut b1 = [0u8; 1];
    for _ in 0..n {
        r.read_exact(&mut b1)?;
        valid.push(b1[0] != 0);
    }
    RangeImage::from_parts(model, depth, valid)
}

/// Reads the vertex lines back out of an ASCII PLY written by [`write_ply`].
pub fn read_ply(path: &Path) -> Result<(Vec<Point3>, Vec<[u8; 3]>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let mut count = None;
    for line in lines.by_ref() {
        let line = line?;
        if let Some(rest) = line.strip_prefix("element vertex ") {
            count = Some(
                rest.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Format("bad vertex count".into()))?,
            );
        }
        if line.trim() == "end_header" {
            break;
        }
    }
    let count = count.ok_or_else(|| Error::Format("missing vertex element".into()))?;
    let mut points = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    for line in lines.take(count) {
        let line = line?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(Error::Format("bad PLY vertex line".into()));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Format("bad PLY float".into()))
        };
        points.push([parse(f[0])?, parse(f[1])?, parse(f[2])?]);
        let pc = |s: &str| {
            s.parse::<u8>()
                .map_err(|_| Error::Format("bad PLY color".into()))
        };
        colors.push([pc(f[3])?, pc(f[4])?, pc(f[5])?]);
    }
    if points.len() != count {
        return Err(Error::Format("PLY vertex list truncated".into()));
    }
    Ok((points, colors))
}
