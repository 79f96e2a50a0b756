//! Point cloud containers, voxelization and color conversion.
//!
//! A [`PointCloud`] holds raw positions with per-point attribute channels.
//! [`voxelize`] snaps it onto a `2^depth` integer grid, averaging attributes
//! of colliding points, and orders the result by Morton key — the canonical
//! ordering every later stage relies on.

use alloc::string::String;
use alloc::vec::Vec;

use crate::math;

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum CloudError {
    #[error("point cloud is empty")]
    Empty,
    #[error("positions/attributes length mismatch: {positions} points vs {rows} attribute rows")]
    LengthMismatch { positions: usize, rows: usize },
    #[error("expected {expected} attribute channels, found {found}")]
    ChannelCount { expected: usize, found: usize },
    #[error("octree depth {0} out of range 1..=16")]
    DepthOutOfRange(u8),
    #[error("coordinate {coord} exceeds grid size {grid} at depth {depth}")]
    CoordOutOfRange { coord: u32, grid: u32, depth: u8 },
    #[error("non-finite attribute value at point {0}")]
    NonFiniteAttribute(usize),
}

/// Raw point cloud: world-space positions plus `n` attribute channels per
/// point, stored row-major (`attributes.len() == positions.len() * n`).
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<[f64; 3]>,
    pub attributes: Vec<f64>,
    pub channel_names: Vec<String>,
}

impl PointCloud {
    pub fn new(
        positions: Vec<[f64; 3]>,
        attributes: Vec<f64>,
        channel_names: Vec<String>,
    ) -> Result<Self, CloudError> {
        let n = channel_names.len();
        if n == 0 || positions.is_empty() {
            return Err(CloudError::Empty);
        }
        if attributes.len() != positions.len() * n {
            return Err(CloudError::LengthMismatch {
                positions: positions.len(),
                rows: attributes.len() / n.max(1),
            });
        }
        if let Some(i) = attributes.iter().position(|a| !a.is_finite()) {
            return Err(CloudError::NonFiniteAttribute(i / n));
        }
        Ok(Self {
            positions,
            attributes,
            channel_names,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn channel_count(&self) -> usize {
        self.channel_names.len()
    }

    /// Attribute row of point `i`.
    pub fn attr(&self, i: usize) -> &[f64] {
        let n = self.channel_count();
        &self.attributes[i * n..(i + 1) * n]
    }
}

/// Deduplicated integer voxels on a `2^depth` grid, sorted by Morton key,
/// with arithmetic-mean-merged attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelizedCloud {
    pub depth: u8,
    pub voxels: Vec<[u32; 3]>,
    /// Row-major, `voxels.len() * channel_count` entries.
    pub attributes: Vec<f64>,
    pub channel_names: Vec<String>,
    /// Input point count before deduplication; the denominator for BPP.
    pub original_point_count: u64,
}

impl VoxelizedCloud {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn channel_count(&self) -> usize {
        self.channel_names.len()
    }

    pub fn attr(&self, i: usize) -> &[f64] {
        let n = self.channel_count();
        &self.attributes[i * n..(i + 1) * n]
    }

    /// Morton keys of the voxels, in stored (sorted) order.
    pub fn morton_keys(&self) -> Result<Vec<u64>, CloudError> {
        self.voxels
            .iter()
            .map(|v| morton_encode(v[0], v[1], v[2], self.depth))
            .collect()
    }
}

/// Interleaves coordinate bits into a single key; `x` occupies the least
/// significant bit of each triple, `z` the most significant. Sorting by the
/// key therefore places pairs that differ only in the lowest `x` bit next to
/// each other, which is the merge order of the hierarchical transform.
pub fn morton_encode(x: u32, y: u32, z: u32, depth: u8) -> Result<u64, CloudError> {
    if depth == 0 || depth > 16 {
        return Err(CloudError::DepthOutOfRange(depth));
    }
    let grid = 1u32 << depth;
    for &c in &[x, y, z] {
        if c >= grid {
            return Err(CloudError::CoordOutOfRange {
                coord: c,
                grid,
                depth,
            });
        }
    }
    let mut key = 0u64;
    for b in 0..depth as u64 {
        key |= ((x as u64 >> b) & 1) << (3 * b);
        key |= ((y as u64 >> b) & 1) << (3 * b + 1);
        key |= ((z as u64 >> b) & 1) << (3 * b + 2);
    }
    Ok(key)
}

/// Inverse of [`morton_encode`].
pub fn morton_decode(key: u64, depth: u8) -> [u32; 3] {
    let mut p = [0u32; 3];
    for b in 0..depth as u64 {
        p[0] |= (((key >> (3 * b)) & 1) as u32) << b;
        p[1] |= (((key >> (3 * b + 1)) & 1) as u32) << b;
        p[2] |= (((key >> (3 * b + 2)) & 1) as u32) << b;
    }
    p
}

/// FNV-1a over the sorted Morton keys; identifies a voxel geometry so the
/// decoder can reject a mismatched geometry file.
pub fn geometry_checksum(cloud: &VoxelizedCloud) -> Result<u64, CloudError> {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for key in cloud.morton_keys()? {
        for byte in key.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    Ok(h)
}

/// Snaps a cloud onto the `[0, 2^depth)` grid. The longest bounding-box axis
/// maps onto the full grid; the other axes share the scale so the shape is
/// not distorted. Points falling into the same voxel have their attributes
/// arithmetic-mean averaged. A degenerate bounding box (all points
/// coincident) collapses to a single voxel at the origin.
pub fn voxelize(cloud: &PointCloud, depth: u8) -> Result<VoxelizedCloud, CloudError> {
    if depth == 0 || depth > 16 {
        return Err(CloudError::DepthOutOfRange(depth));
    }
    if cloud.is_empty() {
        return Err(CloudError::Empty);
    }
    let n = cloud.channel_count();
    let grid = 1u32 << depth;

    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for p in &cloud.positions {
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    let span = (0..3).map(|a| max[a] - min[a]).fold(0.0f64, f64::max);

    let mut keyed: Vec<(u64, usize)> = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.positions.iter().enumerate() {
        let mut v = [0u32; 3];
        if span > 0.0 {
            for a in 0..3 {
                let c = math::floor((p[a] - min[a]) * grid as f64 / span);
                v[a] = (c.max(0.0) as u32).min(grid - 1);
            }
        }
        keyed.push((morton_encode(v[0], v[1], v[2], depth)?, i));
    }
    keyed.sort_unstable();

    let mut voxels = Vec::new();
    let mut attributes = Vec::new();
    let mut run = 0;
    while run < keyed.len() {
        let key = keyed[run].0;
        let mut acc = alloc::vec![0.0f64; n];
        let mut count = 0usize;
        while run < keyed.len() && keyed[run].0 == key {
            for (s, a) in acc.iter_mut().zip(cloud.attr(keyed[run].1)) {
                *s += a;
            }
            count += 1;
            run += 1;
        }
        voxels.push(morton_decode(key, depth));
        attributes.extend(acc.iter().map(|s| s / count as f64));
    }

    Ok(VoxelizedCloud {
        depth,
        voxels,
        attributes,
        channel_names: cloud.channel_names.clone(),
        original_point_count: cloud.len() as u64,
    })
}

/// BT.601 full-range RGB -> YUV forward matrix (chroma offset +128 applied
/// separately).
const RGB_TO_YUV: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [-0.299 / 1.772, -0.587 / 1.772, (1.0 - 0.114) / 1.772],
    [(1.0 - 0.299) / 1.402, -0.587 / 1.402, -0.114 / 1.402],
];

/// Analytic inverse of [`RGB_TO_YUV`].
const YUV_TO_RGB: [[f64; 3]; 3] = [
    [1.0, 0.0, 1.402],
    [
        1.0,
        -0.114 * 1.772 / 0.587,
        -0.299 * 1.402 / 0.587,
    ],
    [1.0, 1.772, 0.0],
];

fn convert3(cloud: &PointCloud, m: &[[f64; 3]; 3], names: [&str; 3]) -> PointCloud {
    let mut attributes = Vec::with_capacity(cloud.attributes.len());
    for i in 0..cloud.len() {
        let a = cloud.attr(i);
        for row in m {
            attributes.push(row[0] * a[0] + row[1] * a[1] + row[2] * a[2]);
        }
    }
    PointCloud {
        positions: cloud.positions.clone(),
        attributes,
        channel_names: names.iter().map(|s| String::from(*s)).collect(),
    }
}

/// BT.601 full-range RGB -> YUV; chroma channels carry a +128 offset so all
/// channels live in [0, 255]. Values stay real; rounding happens only when
/// a file is finally written.
pub fn rgb_to_yuv(cloud: &PointCloud) -> Result<PointCloud, CloudError> {
    if cloud.channel_count() != 3 {
        return Err(CloudError::ChannelCount {
            expected: 3,
            found: cloud.channel_count(),
        });
    }
    let mut out = convert3(cloud, &RGB_TO_YUV, ["Y", "U", "V"]);
    for i in 0..out.positions.len() {
        out.attributes[i * 3 + 1] += 128.0;
        out.attributes[i * 3 + 2] += 128.0;
    }
    Ok(out)
}

/// Inverse of [`rgb_to_yuv`]; composed with the forward conversion it is the
/// identity to within 1e-9 per component.
pub fn yuv_to_rgb(cloud: &PointCloud) -> Result<PointCloud, CloudError> {
    if cloud.channel_count() != 3 {
        return Err(CloudError::ChannelCount {
            expected: 3,
            found: cloud.channel_count(),
        });
    }
    let mut shifted = cloud.clone();
    for i in 0..shifted.positions.len() {
        shifted.attributes[i * 3 + 1] -= 128.0;
        shifted.attributes[i * 3 + 2] -= 128.0;
    }
    Ok(convert3(&shifted, &YUV_TO_RGB, ["R", "G", "B"]))
}

/// Max absolute element of `A*B - I`; used to verify the conversion
/// matrices are mutual inverses.
pub fn matrix_inverse_residual() -> f64 {
    let mut worst = 0.0f64;
    for r in 0..3 {
        for c in 0..3 {
            let mut s = 0.0;
            for k in 0..3 {
                s += RGB_TO_YUV[r][k] * YUV_TO_RGB[k][c];
            }
            let expect = if r == c { 1.0 } else { 0.0 };
            worst = worst.max((s - expect).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn morton_basics() {
        assert_eq!(morton_encode(0, 0, 0, 1).unwrap(), 0);
        assert_eq!(morton_encode(1, 0, 0, 1).unwrap(), 1);
        assert_eq!(morton_encode(0, 1, 0, 1).unwrap(), 2);
        assert_eq!(morton_encode(0, 0, 1, 1).unwrap(), 4);
        assert!(matches!(
            morton_encode(2, 0, 0, 1),
            Err(CloudError::CoordOutOfRange { .. })
        ));
    }

    #[test]
    fn morton_depth2_is_a_bijection() {
        // Brute-force enumeration of [0,4)^3.
        let mut seen = [false; 64];
        for x in 0..4 {
            for y in 0..4 {
                for z in 0..4 {
                    let k = morton_encode(x, y, z, 2).unwrap();
                    assert!(k < 64);
                    assert!(!seen[k as usize]);
                    seen[k as usize] = true;
                    assert_eq!(morton_decode(k, 2), [x, y, z]);
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn morton_order_is_lexicographic_on_interleaved_bits() {
        // Exhaustive up to depth 3: the key IS the interleaved bits, so
        // integer order on keys equals lexicographic order on bit strings.
        for depth in 1..=3u8 {
            let grid = 1u32 << depth;
            let mut keys: Vec<u64> = Vec::new();
            for z in 0..grid {
                for y in 0..grid {
                    for x in 0..grid {
                        keys.push(morton_encode(x, y, z, depth).unwrap());
                    }
                }
            }
            keys.sort_unstable();
            for (i, k) in keys.iter().enumerate() {
                assert_eq!(*k, i as u64);
            }
        }
    }

    #[test]
    fn voxelize_means_colliding_points() {
        let cloud = PointCloud::new(
            vec![[0.0, 0.0, 0.0], [0.01, 0.01, 0.01], [10.0, 10.0, 10.0]],
            vec![10.0, 20.0, 5.0],
            names(&["I"]),
        )
        .unwrap();
        let v = voxelize(&cloud, 2).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.voxels[0], [0, 0, 0]);
        assert_eq!(v.attr(0), &[15.0]);
        assert_eq!(v.original_point_count, 3);
    }

    #[test]
    fn voxelize_cube_corners_depth1() {
        let mut positions = Vec::new();
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    positions.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        let attrs: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let cloud = PointCloud::new(positions, attrs, names(&["I"])).unwrap();
        let v = voxelize(&cloud, 1).unwrap();
        assert_eq!(v.len(), 8);
        for voxel in &v.voxels {
            assert!(voxel.iter().all(|&c| c < 2));
        }
    }

    #[test]
    fn voxelize_degenerate_bbox_is_single_origin_voxel() {
        let cloud = PointCloud::new(
            vec![[5.0, 5.0, 5.0]; 4],
            vec![1.0, 2.0, 3.0, 4.0],
            names(&["I"]),
        )
        .unwrap();
        let v = voxelize(&cloud, 4).unwrap();
        assert_eq!(v.voxels, vec![[0, 0, 0]]);
        assert_eq!(v.attr(0), &[2.5]);
    }

    #[test]
    fn voxelize_random_cloud_bounds() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let m = 10_000;
        let positions: Vec<[f64; 3]> = (0..m)
            .map(|_| {
                [
                    rng.random_range(-3.0..9.0),
                    rng.random_range(0.0..5.0),
                    rng.random_range(100.0..101.0),
                ]
            })
            .collect();
        let attrs: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..255.0)).collect();
        let cloud = PointCloud::new(positions, attrs, names(&["I"])).unwrap();
        let v = voxelize(&cloud, 9).unwrap();
        assert!(v.len() <= m);
        assert!(v
            .voxels
            .iter()
            .all(|vx| vx.iter().all(|&c| c < 512)));
        // Sorted by Morton key, no duplicates.
        let keys = v.morton_keys().unwrap();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn voxelize_is_idempotent_on_integer_clouds() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let cloud = PointCloud::new(
            (0..200)
                .map(|_| {
                    [
                        rng.random_range(0..16) as f64,
                        rng.random_range(0..16) as f64,
                        rng.random_range(0..16) as f64,
                    ]
                })
                .collect(),
            (0..200).map(|_| rng.random_range(0.0..255.0)).collect(),
            names(&["I"]),
        )
        .unwrap();
        let once = voxelize(&cloud, 4).unwrap();
        let again = voxelize(
            &PointCloud::new(
                once.voxels
                    .iter()
                    .map(|v| [v[0] as f64, v[1] as f64, v[2] as f64])
                    .collect(),
                once.attributes.clone(),
                once.channel_names.clone(),
            )
            .unwrap(),
            4,
        )
        .unwrap();
        assert_eq!(once.voxels, again.voxels);
        assert_eq!(once.attributes, again.attributes);
    }

    #[test]
    fn color_conversion_fixed_points() {
        let cloud = PointCloud::new(
            vec![[0.0; 3], [0.0; 3]],
            vec![0.0, 0.0, 0.0, 255.0, 255.0, 255.0],
            names(&["R", "G", "B"]),
        )
        .unwrap();
        let yuv = rgb_to_yuv(&cloud).unwrap();
        let black = yuv.attr(0);
        let white = yuv.attr(1);
        assert!((black[0]).abs() < 1e-12);
        assert!((black[1] - 128.0).abs() < 1e-12);
        assert!((black[2] - 128.0).abs() < 1e-12);
        assert!((white[0] - 255.0).abs() < 1e-12);
        assert!((white[1] - 128.0).abs() < 1e-10);
        assert!((white[2] - 128.0).abs() < 1e-10);
        assert_eq!(yuv.channel_names, names(&["Y", "U", "V"]));
    }

    #[test]
    fn color_conversion_roundtrip() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = 500;
        let attrs: Vec<f64> = (0..m * 3).map(|_| rng.random_range(0.0..255.0)).collect();
        let cloud =
            PointCloud::new(vec![[0.0; 3]; m], attrs.clone(), names(&["R", "G", "B"])).unwrap();
        let back = yuv_to_rgb(&rgb_to_yuv(&cloud).unwrap()).unwrap();
        for (a, b) in attrs.iter().zip(&back.attributes) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn conversion_matrices_are_mutual_inverses() {
        assert!(matrix_inverse_residual() < 1e-12);
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let cloud =
            PointCloud::new(vec![[0.0; 3]], vec![1.0], names(&["I"])).unwrap();
        assert!(matches!(
            rgb_to_yuv(&cloud),
            Err(CloudError::ChannelCount { .. })
        ));
    }
}
