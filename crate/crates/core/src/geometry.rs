//! Planar geometry helpers: points, polygons and the projection into local meters.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A polygon with an exterior ring and optional holes; rings are closed
/// implicitly (the last vertex connects back to the first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub exterior: Vec<Point>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub holes: Vec<Vec<Point>>,
}

/// One or more polygons making up a single feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub parts: Vec<Polygon>,
}

fn ring_signed_area_and_moment(ring: &[Point]) -> (f64, f64, f64) {
    let n = ring.len();
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let p = ring[i];
        let q = ring[(i + 1) % n];
        let cross = p.x * q.y - q.x * p.y;
        a += cross;
        cx += (p.x + q.x) * cross;
        cy += (p.y + q.y) * cross;
    }
    (a / 2.0, cx / 6.0, cy / 6.0)
}

fn ring_contains(ring: &[Point], pt: &Point) -> bool {
    let mut inside = false;
    let n = ring.len();
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > pt.y) != (b.y > pt.y) {
            let x_cross = (b.x - a.x) * (pt.y - a.y) / (b.y - a.y) + a.x;
            if pt.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

impl Polygon {
    pub fn area(&self) -> f64 {
        let outer = ring_signed_area_and_moment(&self.exterior).0.abs();
        let holes: f64 = self
            .holes
            .iter()
            .map(|h| ring_signed_area_and_moment(h).0.abs())
            .sum();
        outer - holes
    }

    pub fn contains(&self, pt: &Point) -> bool {
        ring_contains(&self.exterior, pt) && !self.holes.iter().any(|h| ring_contains(h, pt))
    }
}

impl Area {
    pub fn contains(&self, pt: &Point) -> bool {
        self.parts.iter().any(|p| p.contains(pt))
    }

    pub fn area(&self) -> f64 {
        self.parts.iter().map(Polygon::area).sum()
    }

    /// Area-weighted centroid; falls back to the vertex mean for degenerate shapes.
    pub fn centroid(&self) -> Point {
        let (mut total, mut mx, mut my) = (0.0, 0.0, 0.0);
        for part in &self.parts {
            let rings = std::iter::once(&part.exterior).chain(part.holes.iter());
            for (k, ring) in rings.enumerate() {
                let (a, cx, cy) = ring_signed_area_and_moment(ring);
                // exterior counts positive, holes negative, whatever the winding
                let sign = if (k == 0) == (a >= 0.0) { 1.0 } else { -1.0 };
                total += sign * a;
                mx += sign * cx;
                my += sign * cy;
            }
        }
        if total.abs() > 1e-12 {
            return Point::new(mx / total, my / total);
        }
        let verts: Vec<&Point> = self.parts.iter().flat_map(|p| p.exterior.iter()).collect();
        let n = verts.len().max(1) as f64;
        Point::new(
            verts.iter().map(|p| p.x).sum::<f64>() / n,
            verts.iter().map(|p| p.y).sum::<f64>() / n,
        )
    }
}

const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Coordinate reference systems accepted in input layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crs {
    /// Already planar, in meters.
    LocalMeters,
    /// WGS84 longitude/latitude in degrees.
    LonLat,
}

impl Crs {
    pub fn parse(name: &str) -> Option<Crs> {
        let norm = name.trim().to_ascii_uppercase();
        match norm.as_str() {
            "LOCAL:METERS" | "LOCAL_METERS" | "LOCAL" => Some(Crs::LocalMeters),
            "EPSG:4326" | "URN:OGC:DEF:CRS:EPSG::4326" | "URN:OGC:DEF:CRS:OGC:1.3:CRS84" | "CRS84" => {
                Some(Crs::LonLat)
            }
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Crs::LocalMeters => "local:meters",
            Crs::LonLat => "EPSG:4326",
        }
    }
}

/// Equirectangular projection about a reference point; adequate at city scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub lon0: f64,
    pub lat0: f64,
}

impl Projection {
    pub fn project(&self, lon: f64, lat: f64) -> Point {
        let k = std::f64::consts::PI / 180.0;
        Point::new(
            EARTH_RADIUS_M * (lon - self.lon0) * k * (self.lat0 * k).cos(),
            EARTH_RADIUS_M * (lat - self.lat0) * k,
        )
    }
}
