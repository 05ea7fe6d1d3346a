use crate::data::{FeatureMap, SaliencyGrid};
use crate::{Error, Result};

/// Channel-wise mean of the feature map over `cells` (flat row-major indices).
pub fn partition_avg_pool(features: &FeatureMap, cells: &[usize]) -> Result<Vec<f64>> {
    let hw = features.height() * features.width();
    if cells.is_empty() {
        return Err(Error::invalid("empty partition"));
    }
    if let Some(c) = cells.iter().find(|&&c| c >= hw) {
        return Err(Error::invalid(format!("cell {c} outside {hw}-cell grid")));
    }
    Ok(avg_pool_raw(features.data(), features.channels(), hw, cells))
}

pub(crate) fn avg_pool_raw(data: &[f64], channels: usize, hw: usize, cells: &[usize]) -> Vec<f64> {
    let n = cells.len() as f64;
    (0..channels)
        .map(|c| {
            let plane = &data[c * hw..(c + 1) * hw];
            cells.iter().map(|&k| plane[k]).sum::<f64>() / n
        })
        .collect()
}

/// Saliency values of `cells`, in the order given (row-major for partition cell lists).
pub fn partition_saliency_vector(grid: &SaliencyGrid, cells: &[usize]) -> Result<Vec<f64>> {
    let n = grid.values().len();
    cells
        .iter()
        .map(|&c| {
            grid.values()
                .get(c)
                .copied()
                .ok_or_else(|| Error::invalid(format!("cell {c} outside {n}-cell saliency grid")))
        })
        .collect()
}
