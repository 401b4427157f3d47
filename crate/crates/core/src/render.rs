//! Orthographic z-buffer renderer with flat shading, used for critic views
//! and run artifacts. Output is a pure function of the input geometry.

use thiserror::Error;

use crate::geometry::{TriMesh, Vec3};
use crate::scene::{Material, SimState};

pub const DEFAULT_RESOLUTION: usize = 512;
pub const AZIMUTHS_DEG: [f64; 4] = [0.0, 90.0, 180.0, 270.0];
pub const ELEVATION_DEG: f64 = 30.0;
pub const MARGIN: f64 = 0.1;
pub const AMBIENT: f64 = 0.15;
pub const BACKGROUND: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB.
    pub data: Vec<u8>,
}

impl Image {
    fn new(width: usize, height: usize) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&BACKGROUND);
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Binary P6.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    #[cfg(feature = "png")]
    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().expect("in-memory png header");
            w.write_image_data(&self.data).expect("in-memory png data");
        }
        out
    }

    /// Count of pixels differing from the background.
    pub fn covered_pixels(&self) -> usize {
        self.data.chunks(3).filter(|p| *p != BACKGROUND).count()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("nothing to render")]
    EmptyMesh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub resolution: usize,
    pub azimuths_deg: Vec<f64>,
    pub elevation_deg: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            resolution: DEFAULT_RESOLUTION,
            azimuths_deg: AZIMUTHS_DEG.to_vec(),
            elevation_deg: ELEVATION_DEG,
        }
    }
}

/// Drawable content in world coordinates.
#[derive(Debug, Clone, Default)]
pub struct Drawing {
    pub meshes: Vec<(TriMesh, [u8; 3])>,
    /// Particles drawn as screen-aligned squares of the given world size.
    pub points: Vec<(Vec3, f64, [u8; 3])>,
}

const PALETTE: [[u8; 3]; 6] = [
    [70, 110, 180],
    [200, 120, 60],
    [90, 160, 90],
    [170, 80, 150],
    [120, 120, 120],
    [190, 170, 60],
];

impl Drawing {
    pub fn from_state(state: &SimState) -> Self {
        let mut d = Drawing::default();
        for (i, b) in state.bodies.iter().enumerate() {
            d.meshes.push((b.world_mesh(), PALETTE[i % PALETTE.len()]));
        }
        for set in &state.particles {
            let color = match set.material {
                Material::Dough => [225, 195, 140],
                Material::Water => [60, 140, 230],
            };
            for p in &set.positions {
                d.points.push((*p, set.spacing, color));
            }
        }
        d
    }

    fn all_points(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.meshes
            .iter()
            .flat_map(|(m, _)| m.vertices.iter().copied())
            .chain(self.points.iter().map(|p| p.0))
    }
}

/// Orthographic camera. `view` points from the scene toward the eye.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub view: Vec3,
    pub up: Vec3,
    pub center: Vec3,
    /// World height (and width) covered by the square image.
    pub frame_height: f64,
    pub size: usize,
}

impl Camera {
    pub fn orbit(azimuth_deg: f64, elevation_deg: f64, size: usize) -> Self {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let view = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        let right = Vec3::new(-az.sin(), az.cos(), 0.0);
        Camera {
            view,
            up: view.cross(&right),
            center: Vec3::zeros(),
            frame_height: 1.0,
            size,
        }
    }

    pub fn right(&self) -> Vec3 {
        self.up.cross(&self.view)
    }

    /// Center and size the frame on `points` with a relative margin.
    fn frame<'a>(&mut self, points: impl Iterator<Item = &'a Vec3>) -> bool {
        let (r, u) = (self.right(), self.up);
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in points {
            let (x, y) = (p.dot(&r), p.dot(&u));
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            return false;
        }
        self.center = r * ((x0 + x1) / 2.0) + u * ((y0 + y1) / 2.0);
        self.frame_height = (x1 - x0).max(y1 - y0).max(1e-9) * (1.0 + 2.0 * MARGIN);
        true
    }
}

struct Raster {
    img: Image,
    depth: Vec<f64>,
    cam: Camera,
    right: Vec3,
    scale: f64,
}

impl Raster {
    fn new(cam: Camera) -> Self {
        let n = cam.size.max(1);
        Raster {
            img: Image::new(n, n),
            depth: vec![f64::NEG_INFINITY; n * n],
            right: cam.right(),
            scale: n as f64 / cam.frame_height,
            cam,
        }
    }

    /// Screen x, screen y (pixels, y down) and depth (larger is nearer).
    fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        let n = self.img.width as f64;
        let d = p - self.cam.center;
        (
            d.dot(&self.right) * self.scale + n / 2.0,
            n / 2.0 - d.dot(&self.cam.up) * self.scale,
            p.dot(&self.cam.view),
        )
    }

    fn plot(&mut self, x: usize, y: usize, z: f64, c: [u8; 3]) {
        let i = y * self.img.width + x;
        if z > self.depth[i] {
            self.depth[i] = z;
            self.img.data[i * 3..i * 3 + 3].copy_from_slice(&c);
        }
    }

    fn triangle(&mut self, s: [(f64, f64, f64); 3], c: [u8; 3]) {
        let n = self.img.width as f64;
        let minx = s.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor().max(0.0);
        let maxx = s.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil().min(n - 1.0);
        let miny = s.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0);
        let maxy = s.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil().min(n - 1.0);
        if minx > maxx || miny > maxy {
            return;
        }
        let area = (s[1].0 - s[0].0) * (s[2].1 - s[0].1) - (s[2].0 - s[0].0) * (s[1].1 - s[0].1);
        if area.abs() < 1e-12 {
            return;
        }
        for py in miny as usize..=maxy as usize {
            for px in minx as usize..=maxx as usize {
                let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
                let w0 = ((s[1].0 - x) * (s[2].1 - y) - (s[2].0 - x) * (s[1].1 - y)) / area;
                let w1 = ((s[2].0 - x) * (s[0].1 - y) - (s[0].0 - x) * (s[2].1 - y)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * s[0].2 + w1 * s[1].2 + w2 * s[2].2;
                self.plot(px, py, z, c);
            }
        }
    }
}

fn shade(c: [u8; 3], k: f64) -> [u8; 3] {
    c.map(|v| (v as f64 * k).round().clamp(0.0, 255.0) as u8)
}

/// Draw with an explicit camera.
pub fn render_camera(drawing: &Drawing, cam: Camera) -> Image {
    let mut r = Raster::new(cam);
    let res = r.img.width as f64;
    for (mesh, color) in &drawing.meshes {
        for f in 0..mesh.faces.len() {
            let n = mesh.face_normal(f);
            if !(n.norm() > 0.0) {
                continue;
            }
            let k = n.normalize().dot(&cam.view).abs().max(AMBIENT);
            let s = mesh.triangle(f).map(|p| r.project(&p));
            r.triangle(s, shade(*color, k));
        }
    }
    for (p, size, color) in &drawing.points {
        let (sx, sy, z) = r.project(p);
        let half = (size * r.scale / 2.0).max(0.5);
        let (xa, xb) = ((sx - half).floor().max(0.0), (sx + half).ceil().min(res - 1.0));
        let (ya, yb) = ((sy - half).floor().max(0.0), (sy + half).ceil().min(res - 1.0));
        if xa > xb || ya > yb {
            continue;
        }
        for py in ya as usize..=yb as usize {
            for px in xa as usize..=xb as usize {
                r.plot(px, py, z, *color);
            }
        }
    }
    r.img
}

/// One square image per azimuth; every view is framed on the same bounds.
pub fn render(drawing: &Drawing, opts: &RenderOptions) -> Vec<Image> {
    let pts: Vec<Vec3> = drawing.all_points().collect();
    opts.azimuths_deg
        .iter()
        .map(|&az| {
            let mut cam = Camera::orbit(az, opts.elevation_deg, opts.resolution.max(1));
            if !cam.frame(pts.iter()) {
                return Image::new(cam.size, cam.size);
            }
            render_camera(drawing, cam)
        })
        .collect()
}

/// `n_views` evenly spaced azimuths starting at 0, elevation 30 degrees.
pub fn render_views(mesh: &TriMesh, n_views: usize, size: usize) -> Result<Vec<Image>, RenderError> {
    if mesh.faces.is_empty() || n_views == 0 {
        return Err(RenderError::EmptyMesh);
    }
    let opts = RenderOptions {
        resolution: size,
        azimuths_deg: (0..n_views).map(|i| 360.0 * i as f64 / n_views as f64).collect(),
        elevation_deg: ELEVATION_DEG,
    };
    Ok(render_mesh(mesh, &opts))
}

pub fn render_mesh(mesh: &TriMesh, opts: &RenderOptions) -> Vec<Image> {
    render(
        &Drawing {
            meshes: vec![(mesh.clone(), PALETTE[0])],
            points: vec![],
        },
        opts,
    )
}

pub fn render_state(state: &SimState, opts: &RenderOptions) -> Vec<Image> {
    render(&Drawing::from_state(state), opts)
}
