//! Downstream analytics: area with t-distribution uncertainty, the
//! precision/recall bias factor, protected-zone overlays, NDVI and
//! yield.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use raster::{polygon_mask, GeoTransform, LabelPolygon, Raster, Samples, DEFAULT_NODATA_F32};

use crate::ensemble::ConfidenceMap;
use crate::error::{Error, Result};
use crate::evaluate::COCOA_CLASS;

/// Hectares covered by one pixel.
pub fn pixel_area(geo: &GeoTransform) -> f64 {
    (geo.pixel_size_x * geo.pixel_size_y).abs() / 10_000.0
}

/// Student-t quantile at probability `p` with `df` degrees of freedom.
pub fn t_quantile(p: f64, df: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "quantile probability {p} outside (0, 1)"
        )));
    }
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::InvalidArgument(format!("t-distribution with df {df}: {e}")))?;
    Ok(dist.inverse_cdf(p))
}

/// Planted-area estimate across ensemble members: per-member areas
/// from thresholded confidence maps, their mean and sample standard
/// deviation, and a two-sided t-interval when more than one member
/// contributed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AreaEstimate {
    pub member_areas_ha: Vec<f64>,
    pub mean_ha: f64,
    pub std_ha: f64,
    pub ci_low_ha: Option<f64>,
    pub ci_high_ha: Option<f64>,
    pub level: f64,
    pub threshold: f64,
}

/// Thresholds each member map separately to draw one area sample per
/// member, then summarizes mean, std and confidence interval.
pub fn area_estimate(
    member_maps: &[ConfidenceMap],
    t: f64,
    level: f64,
) -> Result<AreaEstimate> {
    if member_maps.is_empty() {
        return Err(Error::EmptyInput("member confidence maps"));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "threshold {t} outside [0, 1]"
        )));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let first = member_maps[0].raster();
    let per_pixel = pixel_area(first.geo());
    let t32 = t as f32;
    let mut areas = Vec::with_capacity(member_maps.len());
    for map in member_maps {
        if !map.raster().same_grid(first) {
            return Err(Error::GridMismatch(
                "member maps cover different grids".into(),
            ));
        }
        let nodata = map.nodata();
        let count = map
            .confidence()
            .iter()
            .filter(|&&v| f64::from(v) != nodata && v > t32)
            .count();
        areas.push(count as f64 * per_pixel);
    }
    let n = areas.len();
    let mean = areas.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(AreaEstimate {
            member_areas_ha: areas,
            mean_ha: mean,
            std_ha: 0.0,
            ci_low_ha: None,
            ci_high_ha: None,
            level,
            threshold: t,
        });
    }
    let var = areas.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    let q = t_quantile((1.0 + level) / 2.0, (n - 1) as f64)?;
    let half = q * std / (n as f64).sqrt();
    Ok(AreaEstimate {
        member_areas_ha: areas,
        mean_ha: mean,
        std_ha: std,
        ci_low_ha: Some(mean - half),
        ci_high_ha: Some(mean + half),
        level,
        threshold: t,
    })
}

/// Writes one `member,area_ha` row per ensemble member.
pub fn write_member_areas_csv(path: &Path, est: &AreaEstimate) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let wrap = |source: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(["member", "area_ha"]).map_err(wrap)?;
    for (i, a) in est.member_areas_ha.iter().enumerate() {
        w.write_record([i.to_string(), a.to_string()]).map_err(wrap)?;
    }
    w.flush().map_err(|source| Error::IoFailure {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Scale factor precision/recall between true and estimated areas;
/// multiplying a pixel-counted estimate by it reconstructs the true
/// positive-class total from the same confusion matrix.
pub fn bias_factor(precision: f64, recall: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&precision) || !(0.0..=1.0).contains(&recall) {
        return Err(Error::InvalidArgument(
            "precision and recall must lie in [0, 1]".into(),
        ));
    }
    if recall <= 0.0 {
        return Err(Error::ZeroRecall);
    }
    Ok(precision / recall)
}

/// Cocoa cover and deforestation share within one named zone.
/// `deforestation_pct` is the share of forest-loss pixels inside the
/// zone that are now cocoa; it is absent without a loss raster or
/// when the zone contains no loss pixels. Empty zones (no pixels on
/// the grid) carry the `empty` flag and zeroed stats.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZoneStats {
    pub name: String,
    pub cocoa_area_ha: f64,
    pub zone_area_ha: f64,
    pub land_cover_pct: f64,
    pub deforestation_pct: Option<f64>,
    pub empty: bool,
}

/// Per-zone cocoa statistics over a binary cocoa map, sorted by
/// cocoa area descending (ties by name).
pub fn zone_overlay(
    binary: &Raster,
    zones: &[LabelPolygon],
    forest_loss: Option<&Raster>,
) -> Result<Vec<ZoneStats>> {
    if zones.is_empty() {
        return Err(Error::EmptyInput("zone polygons"));
    }
    if binary.bands() != 1 {
        return Err(Error::InvalidArgument(
            "cocoa map must be a single-band binary raster".into(),
        ));
    }
    if let Some(loss) = forest_loss {
        if loss.bands() != 1 || !loss.same_grid(binary) {
            return Err(Error::GridMismatch(
                "forest-loss raster does not share the cocoa grid".into(),
            ));
        }
    }
    let (w, h) = (binary.width(), binary.height());
    let per_pixel = pixel_area(binary.geo());
    let cocoa = binary.band_u8(0);
    let loss = forest_loss.map(|r| r.band_u8(0));
    let mut out = Vec::with_capacity(zones.len());
    for (i, zone) in zones.iter().enumerate() {
        let name = zone
            .name
            .clone()
            .unwrap_or_else(|| format!("zone {i}"));
        let inside = polygon_mask(zone, w, h, binary.geo())?;
        let mut zone_px = 0u64;
        let mut cocoa_px = 0u64;
        let mut loss_px = 0u64;
        let mut cocoa_loss_px = 0u64;
        for (px, &hit) in inside.iter().enumerate() {
            if !hit {
                continue;
            }
            zone_px += 1;
            let is_cocoa = cocoa[px] == COCOA_CLASS;
            if is_cocoa {
                cocoa_px += 1;
            }
            if let Some(l) = loss {
                if l[px] == 1 {
                    loss_px += 1;
                    if is_cocoa {
                        cocoa_loss_px += 1;
                    }
                }
            }
        }
        if zone_px == 0 {
            out.push(ZoneStats {
                name,
                cocoa_area_ha: 0.0,
                zone_area_ha: 0.0,
                land_cover_pct: 0.0,
                deforestation_pct: None,
                empty: true,
            });
            continue;
        }
        let deforestation_pct = if loss.is_some() && loss_px > 0 {
            Some(cocoa_loss_px as f64 / loss_px as f64 * 100.0)
        } else {
            None
        };
        out.push(ZoneStats {
            name,
            cocoa_area_ha: cocoa_px as f64 * per_pixel,
            zone_area_ha: zone_px as f64 * per_pixel,
            land_cover_pct: cocoa_px as f64 / zone_px as f64 * 100.0,
            deforestation_pct,
            empty: false,
        });
    }
    out.sort_by(|a, b| {
        b.cocoa_area_ha
            .partial_cmp(&a.cocoa_area_ha)
            .expect("areas are finite")
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(out)
}

/// Writes zone statistics as CSV, one row per zone in the given
/// (already sorted) order.
pub fn write_zone_stats_csv(path: &Path, stats: &[ZoneStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    for s in stats {
        w.serialize(s).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    }
    w.flush().map_err(|source| Error::IoFailure {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Normalized difference vegetation index (NIR − RED)/(NIR + RED).
/// Output is nodata where either input is nodata, where the sum is
/// zero, or (with a mask) outside predicted cocoa.
pub fn ndvi(nir: &Raster, red: &Raster, cocoa_mask: Option<&Raster>) -> Result<Raster> {
    if nir.bands() != 1 || red.bands() != 1 {
        return Err(Error::InvalidArgument(
            "ndvi expects single-band rasters".into(),
        ));
    }
    if !nir.same_grid(red) {
        return Err(Error::GridMismatch(
            "NIR and RED bands cover different grids".into(),
        ));
    }
    if let Some(m) = cocoa_mask {
        if m.bands() != 1 || !m.same_grid(nir) {
            return Err(Error::GridMismatch(
                "cocoa mask does not share the band grid".into(),
            ));
        }
    }
    let n = nir.band_f32(0);
    let r = red.band_f32(0);
    let mask = cocoa_mask.map(|m| m.band_u8(0));
    let out_nodata = DEFAULT_NODATA_F32;
    let mut data = vec![out_nodata as f32; n.len()];
    for i in 0..n.len() {
        if f64::from(n[i]) == nir.nodata() || f64::from(r[i]) == red.nodata() {
            continue;
        }
        if let Some(m) = mask {
            if m[i] != COCOA_CLASS {
                continue;
            }
        }
        let (a, b) = (f64::from(n[i]), f64::from(r[i]));
        if a < 0.0 || b < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "negative reflectance at pixel {i}: NIR {a}, RED {b}"
            )));
        }
        let sum = a + b;
        if sum == 0.0 {
            continue;
        }
        data[i] = ((a - b) / sum) as f32;
    }
    Ok(Raster::new(
        nir.width(),
        nir.height(),
        1,
        out_nodata,
        *nir.geo(),
        Samples::F32(data),
    )?)
}

/// Mean of valid raster values inside one zone; `mean` is absent when
/// the zone holds no valid pixel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZoneMean {
    pub name: String,
    pub mean: Option<f64>,
    pub valid_pixels: usize,
}

/// Masked mean per zone, in input order.
pub fn zonal_mean(values: &Raster, zones: &[LabelPolygon]) -> Result<Vec<ZoneMean>> {
    if values.bands() != 1 {
        return Err(Error::InvalidArgument(
            "zonal mean expects a single-band raster".into(),
        ));
    }
    let (w, h) = (values.width(), values.height());
    let band = values.band_f32(0);
    let nodata = values.nodata();
    let mut out = Vec::with_capacity(zones.len());
    for (i, zone) in zones.iter().enumerate() {
        let name = zone
            .name
            .clone()
            .unwrap_or_else(|| format!("zone {i}"));
        let inside = polygon_mask(zone, w, h, values.geo())?;
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for (px, &hit) in inside.iter().enumerate() {
            if hit && f64::from(band[px]) != nodata {
                sum += f64::from(band[px]);
                count += 1;
            }
        }
        out.push(ZoneMean {
            name,
            mean: (count > 0).then(|| sum / count as f64),
            valid_pixels: count,
        });
    }
    Ok(out)
}

/// Regional yield: production divided by planted area.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct YieldEstimate {
    pub region: String,
    pub production_kg: f64,
    pub planted_area_ha: f64,
    pub yield_kg_per_ha: f64,
}

pub fn yield_estimate(region: &str, production_kg: f64, planted_area_ha: f64) -> Result<YieldEstimate> {
    if !(production_kg >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "production must be nonnegative, got {production_kg}"
        )));
    }
    if !(planted_area_ha > 0.0) {
        return Err(Error::ZeroArea);
    }
    Ok(YieldEstimate {
        region: region.to_string(),
        production_kg,
        planted_area_ha,
        yield_kg_per_ha: production_kg / planted_area_ha,
    })
}

/// One `region,production_kg` row of a production table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProductionRecord {
    pub region: String,
    pub production_kg: f64,
}

/// Reads a production CSV with header `region,production_kg`.
pub fn read_production_csv(path: &Path) -> Result<Vec<ProductionRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let rec: ProductionRecord = row.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{aggregate_confidence, MemberPrediction};
    use crate::synth::rect_polygon;
    use raster::NODATA_LABEL;

    /// Two-sided 95 % critical values t_{0.975,df} for df 1..=30,
    /// from a standard table (3 decimals).
    const T_TABLE_975: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
        2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];

    fn geo(px: f64) -> GeoTransform {
        GeoTransform::new(0.0, 0.0, px, -px).unwrap()
    }

    fn conf_from(vals: Vec<f32>, w: usize, h: usize, px: f64) -> ConfidenceMap {
        let preds = vec![MemberPrediction {
            member: 0,
            timestamp: 0,
            map: Raster::new(w, h, 1, DEFAULT_NODATA_F32, geo(px), Samples::F32(vals)).unwrap(),
        }];
        aggregate_confidence(&preds, 1).unwrap()
    }

    #[test]
    fn pixel_area_unit_conversions() {
        assert_eq!(pixel_area(&geo(10.0)), 0.01);
        assert_eq!(pixel_area(&geo(20.0)), 0.04);
        assert!((250_000.0 * pixel_area(&geo(10.0)) - 2_500.0).abs() < 1e-9);
    }

    #[test]
    fn t_quantiles_match_frozen_table() {
        for (i, want) in T_TABLE_975.iter().enumerate() {
            let got = t_quantile(0.975, (i + 1) as f64).unwrap();
            assert!(
                (got - want).abs() < 1e-3,
                "df {}: got {got}, table {want}",
                i + 1
            );
        }
        assert!(t_quantile(0.0, 4.0).is_err());
        assert!(t_quantile(1.0, 4.0).is_err());
    }

    /// Maps sized so member i has exactly counts[i] pixels above 0.5
    /// on a 10 m grid.
    fn area_fixture(counts: &[usize], total: usize) -> Vec<ConfidenceMap> {
        counts
            .iter()
            .map(|&c| {
                let vals: Vec<f32> = (0..total)
                    .map(|i| if i < c { 0.9 } else { 0.1 })
                    .collect();
                conf_from(vals, total, 1, 10.0)
            })
            .collect()
    }

    #[test]
    fn area_estimate_worked_example() {
        // Counts of 10 m pixels giving {100, 102, 98, 101, 99} ha.
        let maps = area_fixture(&[10_000, 10_200, 9_800, 10_100, 9_900], 11_000);
        let est = area_estimate(&maps, 0.5, 0.95).unwrap();
        assert_eq!(est.member_areas_ha, vec![100.0, 102.0, 98.0, 101.0, 99.0]);
        assert_eq!(est.mean_ha, 100.0);
        assert!((est.std_ha - 2.5f64.sqrt()).abs() < 1e-12);
        let half = est.ci_high_ha.unwrap() - est.mean_ha;
        assert!((half - 1.963).abs() < 1e-3, "half-width {half}");
        assert!((est.ci_low_ha.unwrap() - 98.037).abs() < 2e-3);
        assert!(est.ci_low_ha.unwrap() <= est.mean_ha);
        assert!(est.mean_ha <= est.ci_high_ha.unwrap());
    }

    #[test]
    fn identical_members_collapse_the_interval() {
        let maps = area_fixture(&[5_000, 5_000, 5_000], 6_000);
        let est = area_estimate(&maps, 0.5, 0.95).unwrap();
        assert_eq!(est.std_ha, 0.0);
        assert_eq!(est.ci_low_ha.unwrap(), est.mean_ha);
        assert_eq!(est.ci_high_ha.unwrap(), est.mean_ha);
    }

    #[test]
    fn single_member_gets_point_estimate_only() {
        let maps = area_fixture(&[5_000], 6_000);
        let est = area_estimate(&maps, 0.5, 0.95).unwrap();
        assert_eq!(est.mean_ha, 50.0);
        assert!(est.ci_low_ha.is_none() && est.ci_high_ha.is_none());
        assert!(area_estimate(&[], 0.5, 0.95).is_err());
    }

    #[test]
    fn interval_width_follows_the_t_over_sqrt_n_law() {
        // Synthetic member areas engineered so the sample std is the
        // same at every n; the half-width must then equal
        // t_{0.975,n-1} * std / sqrt(n) exactly, and shrink with n.
        let sigma = 2.0f64;
        let mut widths = Vec::new();
        for n in [4usize, 16, 64] {
            let d = sigma * (((n - 1) as f64) / n as f64).sqrt();
            let counts: Vec<usize> = (0..n)
                .map(|i| {
                    let a = if i % 2 == 0 { 100.0 + d } else { 100.0 - d };
                    (a * 100.0).round() as usize
                })
                .collect();
            let maps = area_fixture(&counts, 11_000);
            let est = area_estimate(&maps, 0.5, 0.95).unwrap();
            let width = est.ci_high_ha.unwrap() - est.ci_low_ha.unwrap();
            let q = t_quantile(0.975, (n - 1) as f64).unwrap();
            let predicted = 2.0 * q * est.std_ha / (n as f64).sqrt();
            assert!(
                (width - predicted).abs() < 1e-9,
                "n {n}: width {width} vs predicted {predicted}"
            );
            widths.push(width);
        }
        assert!(widths[0] > widths[1] && widths[1] > widths[2]);
    }

    #[test]
    fn bias_factor_identity_on_hand_case() {
        assert_eq!(bias_factor(0.7, 0.7).unwrap(), 1.0);
        // tp=80, fp=20, fn=10: estimate 100 px, truth 90 px. As
        // rationals est * P / R = tp + fn exactly; the f64 chain of
        // three divisions lands within a couple of ulps.
        let (tp, fp, fne) = (80u64, 20u64, 10u64);
        let est = tp + fp;
        let truth = tp + fne;
        // Exact integer form of est * (tp/(tp+fp)) / (tp/(tp+fn)):
        assert_eq!(
            (est as u128) * (tp as u128) * (truth as u128),
            (truth as u128) * (tp as u128) * (est as u128)
        );
        let p = tp as f64 / est as f64;
        let r = tp as f64 / truth as f64;
        let factor = bias_factor(p, r).unwrap();
        let rebuilt = est as f64 * factor;
        assert!(
            (rebuilt - truth as f64).abs() / truth as f64 <= 1e-12,
            "rebuilt {rebuilt}"
        );
        assert!(matches!(bias_factor(0.5, 0.0), Err(Error::ZeroRecall)));
    }

    fn binary_map(w: usize, h: usize, mut f: impl FnMut(usize, usize) -> u8) -> Raster {
        let mut data = vec![0u8; w * h];
        for r in 0..h {
            for c in 0..w {
                data[r * w + c] = f(r, c);
            }
        }
        Raster::new(w, h, 1, f64::from(NODATA_LABEL), geo(10.0), Samples::U8(data)).unwrap()
    }

    #[test]
    fn zone_overlay_checkerboard_and_full_cover() {
        let map = binary_map(40, 40, |r, c| {
            if r < 20 && c < 20 {
                ((r + c) % 2) as u8 // checkerboard quadrant
            } else if r >= 20 && c >= 20 {
                1 // solid cocoa quadrant
            } else {
                0
            }
        });
        let g = *map.geo();
        let zones = vec![
            rect_polygon(&g, 0, 0, 20, 20, 0, Some("checker".into())),
            rect_polygon(&g, 20, 20, 20, 20, 0, Some("solid".into())),
        ];
        let stats = zone_overlay(&map, &zones, None).unwrap();
        // Sorted by cocoa area: solid (400 px) before checker (200 px).
        assert_eq!(stats[0].name, "solid");
        assert_eq!(stats[0].land_cover_pct, 100.0);
        assert_eq!(stats[0].cocoa_area_ha, 4.0);
        assert_eq!(stats[1].name, "checker");
        assert_eq!(stats[1].land_cover_pct, 50.0);
        assert_eq!(stats[1].zone_area_ha, 4.0);
        assert!(stats.iter().all(|s| !s.empty));
        assert!(stats.iter().all(|s| s.deforestation_pct.is_none()));
    }

    #[test]
    fn zone_overlay_deforestation_share() {
        // Zone rows 0..10, cols 0..10; loss in cols 0..4; cocoa in
        // cols 0..2 → 20 of 40 loss pixels are cocoa.
        let map = binary_map(20, 20, |_, c| u8::from(c < 2));
        let loss = binary_map(20, 20, |_, c| u8::from(c < 4));
        let g = *map.geo();
        let zones = vec![
            rect_polygon(&g, 0, 0, 10, 10, 0, Some("hit".into())),
            rect_polygon(&g, 0, 10, 10, 10, 0, Some("quiet".into())),
        ];
        let stats = zone_overlay(&map, &zones, Some(&loss)).unwrap();
        let hit = stats.iter().find(|s| s.name == "hit").unwrap();
        assert_eq!(hit.deforestation_pct, Some(50.0));
        let quiet = stats.iter().find(|s| s.name == "quiet").unwrap();
        assert_eq!(quiet.deforestation_pct, None, "no loss pixels in zone");
        assert_eq!(quiet.cocoa_area_ha, 0.0);
    }

    #[test]
    fn zone_overlay_brute_force_recount() {
        let mut rng_state = 0x2545F4914F6CDD1Du64;
        let mut next = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            rng_state
        };
        let map = binary_map(32, 32, |_, _| (next() % 2) as u8);
        let loss = binary_map(32, 32, |_, _| (next() % 3 == 0) as u8);
        let g = *map.geo();
        let zones: Vec<LabelPolygon> = (0..5)
            .map(|i| {
                let r0 = (next() % 20) as usize;
                let c0 = (next() % 20) as usize;
                let hh = 3 + (next() % 10) as usize;
                let ww = 3 + (next() % 10) as usize;
                rect_polygon(&g, r0, c0, hh, ww, 0, Some(format!("z{i}")))
            })
            .collect();
        let stats = zone_overlay(&map, &zones, Some(&loss)).unwrap();
        for s in &stats {
            let (i, zone) = zones
                .iter()
                .enumerate()
                .find(|(_, z)| z.name.as_deref() == Some(&s.name))
                .unwrap();
            let _ = i;
            let inside = polygon_mask(zone, 32, 32, &g).unwrap();
            let mut zc = 0u64;
            let mut cc = 0u64;
            let mut lc = 0u64;
            let mut cl = 0u64;
            for px in 0..32 * 32 {
                if !inside[px] {
                    continue;
                }
                zc += 1;
                let c = map.band_u8(0)[px] == 1;
                let l = loss.band_u8(0)[px] == 1;
                if c {
                    cc += 1;
                }
                if l {
                    lc += 1;
                    if c {
                        cl += 1;
                    }
                }
            }
            assert_eq!(s.zone_area_ha, zc as f64 * 0.01);
            assert_eq!(s.land_cover_pct, cc as f64 / zc as f64 * 100.0);
            match s.deforestation_pct {
                Some(p) => assert_eq!(p, cl as f64 / lc as f64 * 100.0),
                None => assert_eq!(lc, 0),
            }
            assert!(s.cocoa_area_ha <= s.zone_area_ha);
        }
    }

    #[test]
    fn empty_zone_is_flagged() {
        let map = binary_map(8, 8, |_, _| 1);
        // Zone rectangle far outside the grid.
        let g = *map.geo();
        let zones = vec![
            rect_polygon(&g, 0, 0, 4, 4, 0, Some("in".into())),
            LabelPolygon {
                class: 0,
                name: Some("out".into()),
                rings: vec![vec![
                    [9_000.0, -9_000.0],
                    [9_100.0, -9_000.0],
                    [9_100.0, -9_100.0],
                    [9_000.0, -9_100.0],
                ]],
            },
        ];
        let stats = zone_overlay(&map, &zones, None).unwrap();
        let out = stats.iter().find(|s| s.name == "out").unwrap();
        assert!(out.empty);
        assert_eq!(out.zone_area_ha, 0.0);
        let inz = stats.iter().find(|s| s.name == "in").unwrap();
        assert!(!inz.empty);
    }

    fn band(w: usize, h: usize, vals: Vec<f32>) -> Raster {
        Raster::new(w, h, 1, DEFAULT_NODATA_F32, geo(10.0), Samples::F32(vals)).unwrap()
    }

    #[test]
    fn ndvi_formula_and_masking() {
        let nd = DEFAULT_NODATA_F32 as f32;
        let nir = band(6, 1, vec![0.5, 0.8, 0.4, 0.0, nd, 0.6]);
        let red = band(6, 1, vec![0.5, 0.2, 0.0, 0.0, 0.3, 0.2]);
        let v = ndvi(&nir, &red, None).unwrap();
        let o = v.band_f32(0);
        assert_eq!(o[0], 0.0);
        assert!((f64::from(o[1]) - 0.6).abs() < 1e-7);
        assert_eq!(o[2], 1.0);
        assert_eq!(f64::from(o[3]), v.nodata(), "zero sum is nodata");
        assert_eq!(f64::from(o[4]), v.nodata(), "input nodata propagates");
        // Mask keeps only cocoa pixels.
        let mask = binary_map(6, 1, |_, c| u8::from(c == 5));
        let masked = ndvi(&nir, &red, Some(&mask)).unwrap();
        let m = masked.band_f32(0);
        assert_eq!(f64::from(m[0]), masked.nodata());
        assert!((f64::from(m[5]) - 0.5).abs() < 1e-7);
        // Negative reflectance rejected.
        let bad = band(6, 1, vec![-0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert!(ndvi(&bad, &red, None).is_err());
    }

    #[test]
    fn ndvi_is_antisymmetric_and_bounded() {
        let mut state = 99u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f32) / (u32::MAX >> 1) as f32
        };
        let a: Vec<f32> = (0..64).map(|_| next()).collect();
        let b: Vec<f32> = (0..64).map(|_| next()).collect();
        let fwd = ndvi(&band(8, 8, a.clone()), &band(8, 8, b.clone()), None).unwrap();
        let rev = ndvi(&band(8, 8, b), &band(8, 8, a), None).unwrap();
        for i in 0..64 {
            let x = fwd.band_f32(0)[i];
            if f64::from(x) == fwd.nodata() {
                continue;
            }
            assert!((-1.0..=1.0).contains(&x));
            assert_eq!(rev.band_f32(0)[i], -x);
        }
    }

    #[test]
    fn zonal_mean_hand_values() {
        let vals: Vec<f32> = (0..64).map(|i| i as f32).collect();
        let v = band(8, 8, vals);
        let g = *v.geo();
        let zones = vec![
            rect_polygon(&g, 0, 0, 1, 4, 0, Some("row0".into())),
            rect_polygon(&g, 7, 0, 1, 8, 0, Some("row7".into())),
        ];
        let means = zonal_mean(&v, &zones).unwrap();
        assert_eq!(means[0].mean, Some(1.5)); // mean of 0,1,2,3
        assert_eq!(means[1].mean, Some(59.5)); // mean of 56..=63
        assert_eq!(means[1].valid_pixels, 8);
        // Constant raster: every zone mean equals the constant.
        let c = band(8, 8, vec![0.38; 64]);
        for zm in zonal_mean(&c, &zones).unwrap() {
            assert!((zm.mean.unwrap() - f64::from(0.38f32)).abs() < 1e-12);
        }
        // All-nodata zone reports empty.
        let nd = band(8, 8, vec![DEFAULT_NODATA_F32 as f32; 64]);
        let empty = zonal_mean(&nd, &zones).unwrap();
        assert_eq!(empty[0].mean, None);
        assert_eq!(empty[0].valid_pixels, 0);
    }

    #[test]
    fn yield_division_and_errors() {
        let y = yield_estimate("gh", 320_000_000.0, 1_000_000.0).unwrap();
        assert_eq!(y.yield_kg_per_ha, 320.0);
        let zero = yield_estimate("gh", 0.0, 10.0).unwrap();
        assert_eq!(zero.yield_kg_per_ha, 0.0);
        assert!(matches!(
            yield_estimate("gh", 5.0, 0.0),
            Err(Error::ZeroArea)
        ));
        assert!(yield_estimate("gh", -1.0, 10.0).is_err());
    }

    #[test]
    fn production_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("production.csv");
        std::fs::write(&path, "region,production_kg\nnorth,125000\nsouth,90000.5\n").unwrap();
        let rows = read_production_csv(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].region, "north");
        assert_eq!(rows[1].production_kg, 90000.5);
    }

    #[test]
    fn area_and_zone_outputs_serialize_to_csv() {
        let dir = tempfile::tempdir().unwrap();
        let maps = area_fixture(&[100, 200], 300);
        let est = area_estimate(&maps, 0.5, 0.95).unwrap();
        let area_path = dir.path().join("areas.csv");
        write_member_areas_csv(&area_path, &est).unwrap();
        let body = std::fs::read_to_string(&area_path).unwrap();
        assert!(body.starts_with("member,area_ha\n0,1\n1,2\n"));

        let map = binary_map(8, 8, |_, _| 1);
        let zones = vec![rect_polygon(&map.geo().clone(), 0, 0, 4, 4, 0, Some("z".into()))];
        let stats = zone_overlay(&map, &zones, None).unwrap();
        let zone_path = dir.path().join("zones.csv");
        write_zone_stats_csv(&zone_path, &stats).unwrap();
        let body = std::fs::read_to_string(&zone_path).unwrap();
        assert!(body.contains("name,cocoa_area_ha,zone_area_ha,land_cover_pct,deforestation_pct,empty"));
        assert!(body.contains("z,"));
    }
}
