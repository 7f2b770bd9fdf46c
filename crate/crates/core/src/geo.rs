//! Coordinates, great-circle distance, k-d tree discretisation of training
//! coordinates into class labels, and error metrics.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Users predicted within this distance count towards Acc@161.
pub const ACC_THRESHOLD_KM: f64 = 161.0;

/// A latitude/longitude pair in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(lat.is_finite() && (-90.0..=90.0).contains(&lat)) {
            return Err(Error::Argument(format!("latitude {lat} outside [-90, 90]")));
        }
        if !(lon.is_finite() && (-180.0..=180.0).contains(&lon)) {
            return Err(Error::Argument(format!(
                "longitude {lon} outside [-180, 180]"
            )));
        }
        Ok(Self { lat, lon })
    }

    #[inline]
    pub fn lat(&self) -> f64 {
        self.lat
    }

    #[inline]
    pub fn lon(&self) -> f64 {
        self.lon
    }

    fn coord(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Lat => self.lat,
            Axis::Lon => self.lon,
        }
    }
}

/// Great-circle distance on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (la1, la2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = (b.lat - a.lat).to_radians() / 2.0;
    let dlon = (b.lon - a.lon).to_radians() / 2.0;
    let h = dlat.sin().powi(2) + la1.cos() * la2.cos() * dlon.sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Lat,
    Lon,
}

#[derive(Clone, Debug)]
enum KdNode {
    Split {
        axis: Axis,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class: usize,
    },
}

/// One leaf of the tree: a class label.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    /// Componentwise median of the member coordinates.
    pub representative: GeoPoint,
    /// Indices into the point list the tree was built from.
    pub members: Vec<usize>,
}

/// k-d tree over training coordinates; its leaves are the classes.
///
/// Nodes split at the lower median of whichever axis has the larger raw
/// degree spread. Points equal to the split value go left, both when
/// building and when assigning.
#[derive(Clone, Debug)]
pub struct RegionTree {
    nodes: Vec<KdNode>,
    root: usize,
    bucket_size: usize,
    regions: Vec<Region>,
    point_class: Vec<usize>,
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl RegionTree {
    pub fn build(points: &[GeoPoint], bucket_size: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Argument(
                "cannot build a region tree from no points".into(),
            ));
        }
        if bucket_size == 0 {
            return Err(Error::Argument("bucket size must be at least 1".into()));
        }
        let mut tree = Self {
            nodes: Vec::new(),
            root: 0,
            bucket_size,
            regions: Vec::new(),
            point_class: vec![usize::MAX; points.len()],
        };
        let all: Vec<usize> = (0..points.len()).collect();
        tree.root = tree.grow(points, all);
        Ok(tree)
    }

    fn make_leaf(&mut self, points: &[GeoPoint], members: Vec<usize>) -> usize {
        let class = self.regions.len();
        let mut lats: Vec<f64> = members.iter().map(|&i| points[i].lat).collect();
        let mut lons: Vec<f64> = members.iter().map(|&i| points[i].lon).collect();
        let representative = GeoPoint {
            lat: median_of(&mut lats),
            lon: median_of(&mut lons),
        };
        for &i in &members {
            self.point_class[i] = class;
        }
        self.regions.push(Region {
            representative,
            members,
        });
        self.nodes.push(KdNode::Leaf { class });
        self.nodes.len() - 1
    }

    /// Picks a split value on `axis` leaving both sides non-empty, starting
    /// from the lower median.
    fn split_value(points: &[GeoPoint], members: &[usize], axis: Axis) -> Option<f64> {
        let mut vals: Vec<f64> = members.iter().map(|&i| points[i].coord(axis)).collect();
        vals.sort_by(f64::total_cmp);
        let max = *vals.last()?;
        let median = vals[(vals.len() - 1) / 2];
        if median < max {
            return Some(median);
        }
        // Everything from the median up equals the maximum: split just
        // below the run of maxima instead.
        vals.iter().rev().find(|&&v| v < max).copied()
    }

    fn grow(&mut self, points: &[GeoPoint], members: Vec<usize>) -> usize {
        if members.len() <= self.bucket_size {
            return self.make_leaf(points, members);
        }
        let spread = |axis: Axis| {
            let (lo, hi) =
                members
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                        let v = points[i].coord(axis);
                        (lo.min(v), hi.max(v))
                    });
            hi - lo
        };
        let (first, second) = if spread(Axis::Lon) > spread(Axis::Lat) {
            (Axis::Lon, Axis::Lat)
        } else {
            (Axis::Lat, Axis::Lon)
        };
        let chosen = Self::split_value(points, &members, first)
            .map(|v| (first, v))
            .or_else(|| Self::split_value(points, &members, second).map(|v| (second, v)));
        let Some((axis, value)) = chosen else {
            // All members share one coordinate; the leaf stays oversized.
            log::warn!(
                "{} identical coordinates exceed bucket size {}",
                members.len(),
                self.bucket_size
            );
            return self.make_leaf(points, members);
        };
        let (left, right): (Vec<usize>, Vec<usize>) = members
            .into_iter()
            .partition(|&i| points[i].coord(axis) <= value);
        let slot = self.nodes.len();
        self.nodes.push(KdNode::Leaf { class: usize::MAX });
        let l = self.grow(points, left);
        let r = self.grow(points, right);
        self.nodes[slot] = KdNode::Split {
            axis,
            value,
            left: l,
            right: r,
        };
        slot
    }

    pub fn num_classes(&self) -> usize {
        self.regions.len()
    }

    pub fn bucket_size(&self) -> usize {
        self.bucket_size
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn representative(&self, class: usize) -> GeoPoint {
        self.regions[class].representative
    }

    /// Class of the `i`-th point passed to [`RegionTree::build`].
    pub fn training_class(&self, i: usize) -> usize {
        self.point_class[i]
    }

    pub fn assign_class(&self, p: GeoPoint) -> usize {
        let mut at = self.root;
        loop {
            match &self.nodes[at] {
                KdNode::Leaf { class } => return *class,
                KdNode::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    at = if p.coord(*axis) <= *value {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassBreakdown {
    pub class: usize,
    pub count: usize,
    pub median_km: f64,
}

/// Error metrics over a set of users.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub acc161: f64,
    pub mean_km: f64,
    pub median_km: f64,
    pub count: usize,
    /// Users grouped by the region containing their true location.
    pub per_class: Vec<ClassBreakdown>,
    #[serde(skip)]
    pub errors_km: Vec<f64>,
}

impl EvalReport {
    /// Fraction of users whose error is at most `km`.
    pub fn accuracy_within(&self, km: f64) -> f64 {
        let hits = self.errors_km.iter().filter(|&&e| e <= km).count();
        hits as f64 / self.errors_km.len() as f64
    }

    /// CSV with one row per true region:
    /// `class,count,rep_lat,rep_lon,median_km`.
    pub fn write_per_class_csv<W: Write>(&self, tree: &RegionTree, mut out: W) -> Result<()> {
        writeln!(out, "class,count,rep_lat,rep_lon,median_km")?;
        for row in &self.per_class {
            let rep = tree.representative(row.class);
            writeln!(
                out,
                "{},{},{},{},{}",
                row.class,
                row.count,
                rep.lat(),
                rep.lon(),
                row.median_km
            )?;
        }
        Ok(())
    }
}

/// Scores predicted classes against true coordinates. Each prediction is
/// placed at its class representative.
pub fn evaluate(predicted: &[usize], truth: &[GeoPoint], tree: &RegionTree) -> Result<EvalReport> {
    if predicted.len() != truth.len() {
        return Err(Error::dim(
            "evaluate",
            format!("{} predictions for {} users", predicted.len(), truth.len()),
        ));
    }
    if truth.is_empty() {
        return Err(Error::Argument("no users to evaluate".into()));
    }
    let c = tree.num_classes();
    if let Some(&bad) = predicted.iter().find(|&&k| k >= c) {
        return Err(Error::Argument(format!(
            "predicted class {bad} with {c} classes"
        )));
    }
    let errors: Vec<f64> = predicted
        .iter()
        .zip(truth)
        .map(|(&k, &p)| haversine_km(tree.representative(k), p))
        .collect();

    let mut by_class: Vec<Vec<f64>> = vec![Vec::new(); c];
    for (&p, &e) in truth.iter().zip(&errors) {
        by_class[tree.assign_class(p)].push(e);
    }
    let per_class = by_class
        .into_iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(class, mut v)| ClassBreakdown {
            class,
            count: v.len(),
            median_km: median_of(&mut v),
        })
        .collect();

    let n = errors.len() as f64;
    let acc161 = errors.iter().filter(|&&e| e <= ACC_THRESHOLD_KM).count() as f64 / n;
    let mean_km = errors.iter().sum::<f64>() / n;
    let median_km = median_of(&mut errors.clone());
    Ok(EvalReport {
        acc161,
        mean_km,
        median_km,
        count: errors.len(),
        per_class,
        errors_km: errors,
    })
}
