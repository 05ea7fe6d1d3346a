use crate::patterns::PartitionMap;
use crate::raster::Raster;

const GREEN: [f64; 3] = [0.0, 1.0, 0.0];

/// Copies `image` to RGB and draws the partition boundaries of `map`, scaled
/// from the feature grid to image size, in green.
pub fn draw_partition_overlay(image: &Raster, map: &PartitionMap) -> Raster {
    let (ih, iw) = (image.height(), image.width());
    let (gh, gw) = (map.height(), map.width());
    let mut out = Raster::filled(ih, iw, 3, 0.0).expect("non-empty image");
    for i in 0..ih {
        for j in 0..iw {
            for c in 0..3 {
                let v = image.get(i, j, if image.channels() == 1 { 0 } else { c });
                out.set(i, j, c, v);
            }
        }
    }
    let cell = |i: usize, j: usize| map.partition_of(i * gh / ih, j * gw / iw);
    let thickness = (ih.min(iw) / 112).max(1);
    for i in 0..ih {
        for j in 0..iw {
            let k = cell(i, j);
            let edge = (1..=thickness).any(|d| {
                (i + d < ih && cell(i + d, j) != k) || (j + d < iw && cell(i, j + d) != k)
            });
            if edge {
                for (c, v) in GREEN.iter().enumerate() {
                    out.set(i, j, c, *v);
                }
            }
        }
    }
    out
}
