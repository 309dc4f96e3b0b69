use rayon::prelude::*;

use super::bin::{bin_prepared, tile_grid};
use super::{
    camera_forward, composite_pixel, config, evaluate_hit, prepare, PixelRay, PixelResult, RenderOutput,
    Scratch,
};
use crate::error::Result;
use crate::gabor::{ColorModel, Mode};
use crate::geometry::Camera;
use crate::scene::Scene;

/// Tiled forward render.
pub fn render_forward(scene: &Scene, camera: &Camera, mode: Mode) -> Result<RenderOutput> {
    let model = ColorModel::new(mode, scene.n_waves)?;
    let splats = prepare(scene, camera)?;
    let ts = config::TILE_SIZE;
    let tiles = bin_prepared(&splats, camera, ts);
    let (tiles_x, _) = tile_grid(camera, ts);
    let forward = camera_forward(camera);

    let per_tile: Vec<Vec<(usize, PixelResult)>> = tiles
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let (x0, y0) = ((tile % tiles_x) * ts, (tile / tiles_x) * ts);
            let x1 = (x0 + ts).min(camera.width);
            let y1 = (y0 + ts).min(camera.height);
            let mut scratch = Scratch::default();
            let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for y in y0..y1 {
                for x in x0..x1 {
                    let pr = PixelRay::new(camera, &forward, x, y);
                    let px =
                        composite_pixel(&splats, list.iter().copied(), &pr, &model, &mut scratch);
                    out.push((y * camera.width + x, px));
                }
            }
            out
        })
        .collect();

    let mut output = RenderOutput::new(camera.width, camera.height);
    for tile in per_tile {
        for (idx, px) in tile {
            output.store(idx, &px);
        }
    }
    Ok(output)
}

/// Untiled oracle: every pixel composites all primitives in global
/// front-to-back order.
pub fn reference_render(scene: &Scene, camera: &Camera, mode: Mode) -> Result<RenderOutput> {
    let model = ColorModel::new(mode, scene.n_waves)?;
    let splats = prepare(scene, camera)?;
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        splats[a]
            .depth
            .total_cmp(&splats[b].depth)
            .then(splats[a].index.cmp(&splats[b].index))
    });
    let forward = camera_forward(camera);
    let rows: Vec<Vec<PixelResult>> = (0..camera.height)
        .into_par_iter()
        .map(|y| {
            let mut scratch = Scratch::default();
            (0..camera.width)
                .map(|x| {
                    let pr = PixelRay::new(camera, &forward, x, y);
                    composite_pixel(&splats, order.iter().copied(), &pr, &model, &mut scratch)
                })
                .collect()
        })
        .collect();
    let mut output = RenderOutput::new(camera.width, camera.height);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, px) in row.into_iter().enumerate() {
            output.store(y * camera.width + x, &px);
        }
    }
    Ok(output)
}

/// Per pixel, the primitive with the largest blend weight (`None` where
/// nothing contributes). Used for flat-color splat visualizations.
pub fn dominant_splats(scene: &Scene, camera: &Camera) -> Result<Vec<Option<usize>>> {
    let splats = prepare(scene, camera)?;
    let ts = config::TILE_SIZE;
    let tiles = bin_prepared(&splats, camera, ts);
    let (tiles_x, _) = tile_grid(camera, ts);
    let forward = camera_forward(camera);
    let mut out = vec![None; camera.width * camera.height];
    let per_tile: Vec<Vec<(usize, Option<usize>)>> = tiles
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let (x0, y0) = ((tile % tiles_x) * ts, (tile / tiles_x) * ts);
            let mut px = Vec::new();
            for y in y0..(y0 + ts).min(camera.height) {
                for x in x0..(x0 + ts).min(camera.width) {
                    let pr = PixelRay::new(camera, &forward, x, y);
                    let mut transmittance = 1.0;
                    let mut best: Option<(f64, usize)> = None;
                    for &k in list {
                        let Some(hit) = evaluate_hit(&splats[k], &pr) else {
                            continue;
                        };
                        let w = hit.a * transmittance;
                        if best.is_none_or(|(bw, _)| w > bw) {
                            best = Some((w, splats[k].index));
                        }
                        transmittance *= 1.0 - hit.a;
                        if transmittance < config::T_STOP {
                            break;
                        }
                    }
                    px.push((y * camera.width + x, best.map(|b| b.1)));
                }
            }
            px
        })
        .collect();
    for (idx, id) in per_tile.into_iter().flatten() {
        out[idx] = id;
    }
    Ok(out)
}
