use rand::Rng;

use crate::dataio::Clip;
use crate::error::{Error, Result};
use crate::motionmask::motion_guided_mask;
use crate::posenc::{spatial_coords, temporal_coords, ApeTable, LieRE, PositionCoord, DEFAULT_INIT_STD};
use crate::tensorcore::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

use super::block::{transformer_block, xavier_std, AttentionParams, BlockParams, LayerNormParams, Linear, INIT_STD};
use super::config::{EncoderConfig, PosEncMode};

/// Flattens every `P×P×C` patch of every frame, giving `[T·S, P·P·C]` with
/// frames outermost, patches row-major, and `(row, col, channel)` inside a patch.
pub fn patchify(clip: &Clip, patch: usize) -> Result<Tensor> {
    let d = clip.dims();
    if patch == 0 || !d.height.is_multiple_of(patch) || !d.width.is_multiple_of(patch) {
        return Err(Error::Config(format!(
            "{}x{} frames do not divide into {patch}-pixel patches",
            d.height, d.width
        )));
    }
    let (gh, gw) = (d.height / patch, d.width / patch);
    let pd = patch * patch * d.channels;
    let mut out = Vec::with_capacity(d.frames * gh * gw * pd);
    for t in 0..d.frames {
        let frame = clip.frame(t);
        for gr in 0..gh {
            for gc in 0..gw {
                for y in gr * patch..(gr + 1) * patch {
                    let row = (y * d.width + gc * patch) * d.channels;
                    out.extend(frame[row..row + patch * d.channels].iter().map(|&v| f64::from(v)));
                }
            }
        }
    }
    Tensor::new(vec![d.frames * gh * gw, pd], out)
}

/// Cross-attention projections for every block of both stages, used by the
/// full two-tower comparison. Output projections start at zero.
#[derive(Clone, Debug)]
pub struct CrossParams {
    pub spatial: Vec<AttentionParams>,
    pub temporal: Vec<AttentionParams>,
}

impl CrossParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        config: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = config.embed_dim;
        Ok(Self {
            spatial: (0..config.spatial_layers)
                .map(|i| AttentionParams::register(store, &format!("{prefix}.spatial.{i}"), d, 0.0, rng))
                .collect::<Result<_>>()?,
            temporal: (0..config.temporal_layers)
                .map(|i| AttentionParams::register(store, &format!("{prefix}.temporal.{i}"), d, 0.0, rng))
                .collect::<Result<_>>()?,
        })
    }
}

/// Factorized spatial-then-temporal clip encoder.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub(crate) patch: Linear,
    spatial_cls: ParamId,
    temporal_cls: ParamId,
    spatial_ape: Option<ApeTable>,
    temporal_ape: Option<ApeTable>,
    pub(crate) liere: Option<LieRE>,
    pub(crate) spatial: Vec<BlockParams>,
    temporal: Vec<BlockParams>,
    spatial_norm: LayerNormParams,
    temporal_norm: LayerNormParams,
    spatial_coords: Vec<PositionCoord>,
    temporal_coords: Vec<PositionCoord>,
}

impl Encoder {
    pub fn register<R: Rng + ?Sized>(config: &EncoderConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let patch = Linear::register(
            store,
            "patch",
            config.patch_dim(),
            d,
            xavier_std(config.patch_dim(), d),
            rng,
        )?;
        let spatial_cls = store.add_normal("spatial.cls", &[1, d], INIT_STD, rng)?;
        let temporal_cls = store.add_normal("temporal.cls", &[1, d], INIT_STD, rng)?;
        let (spatial_ape, temporal_ape, liere) = match config.posenc {
            PosEncMode::Ape => (
                Some(ApeTable::register(
                    store,
                    "spatial.ape",
                    config.spatial_tokens(),
                    d,
                    INIT_STD,
                    rng,
                )?),
                Some(ApeTable::register(
                    store,
                    "temporal.ape",
                    config.temporal_tokens(),
                    d,
                    INIT_STD,
                    rng,
                )?),
                None,
            ),
            PosEncMode::Liere => (
                None,
                None,
                Some(LieRE::register(
                    store,
                    "liere",
                    config.head_dim(),
                    config.liere_block,
                    DEFAULT_INIT_STD,
                    rng,
                )?),
            ),
        };
        let spatial = (0..config.spatial_layers)
            .map(|i| BlockParams::register(store, &format!("spatial.{i}"), d, config.mlp_ratio, rng))
            .collect::<Result<_>>()?;
        let temporal = (0..config.temporal_layers)
            .map(|i| BlockParams::register(store, &format!("temporal.{i}"), d, config.mlp_ratio, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: config.clone(),
            patch,
            spatial_cls,
            temporal_cls,
            spatial_ape,
            temporal_ape,
            liere,
            spatial,
            temporal,
            spatial_norm: LayerNormParams::register(store, "spatial.norm", d)?,
            temporal_norm: LayerNormParams::register(store, "temporal.norm", d)?,
            spatial_coords: spatial_coords(config.grid(), config.frames),
            temporal_coords: temporal_coords(config.frames),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn check_clip(&self, clip: &Clip) -> Result<()> {
        let d = clip.dims();
        let c = &self.config;
        if (d.frames, d.height, d.width, d.channels) != (c.frames, c.resolution, c.resolution, c.channels) {
            return Err(Error::Config(format!(
                "clip {}#{} is {}x{}x{}x{}, encoder expects {}x{}x{}x{}",
                clip.video_id,
                clip.clip_index,
                d.frames,
                d.height,
                d.width,
                d.channels,
                c.frames,
                c.resolution,
                c.resolution,
                c.channels
            )));
        }
        Ok(())
    }

    /// Validates the clip against the config and applies motion-guided
    /// masking when enabled. Pure, so callers may cache the result.
    pub fn prepare(&self, clip: &Clip) -> Result<Clip> {
        self.check_clip(clip)?;
        if self.config.mgm_enabled {
            Ok(motion_guided_mask(clip, &self.config.mgm())?.clip)
        } else {
            Ok(clip.clone())
        }
    }

    /// Embedding of one clip, `[d]`. Applies [`Encoder::prepare`] first.
    pub fn encode_clip(&self, tape: &mut Tape, p: &Bound, clip: &Clip) -> Result<Var> {
        let prepared = self.prepare(clip)?;
        let e = self.embed(tape, p, &[&prepared])?;
        tape.reshape(e, &[self.embed_dim()])
    }

    /// Embeddings `[B, d]` of already-prepared clips.
    pub fn embed(&self, tape: &mut Tape, p: &Bound, clips: &[&Clip]) -> Result<Var> {
        self.forward(tape, p, clips, None)
    }

    /// Two weight-shared towers over paired clips, with every block
    /// cross-attending to the partner tower. Returns `([B, d], [B, d])`.
    pub fn embed_towers(
        &self,
        tape: &mut Tape,
        p: &Bound,
        a: &[&Clip],
        b: &[&Clip],
        cross: &CrossParams,
    ) -> Result<(Var, Var)> {
        if a.len() != b.len() {
            return Err(Error::contract(format!(
                "{} clips in tower A, {} in tower B",
                a.len(),
                b.len()
            )));
        }
        let both: Vec<&Clip> = a.iter().chain(b).copied().collect();
        let out = self.forward(tape, p, &both, Some(cross))?;
        let n = a.len();
        Ok((tape.slice(out, 0, 0, n)?, tape.slice(out, 0, n, 2 * n)?))
    }

    /// Inference embeddings, evaluated on a throwaway tape in chunks.
    pub fn embed_values(&self, store: &ParamStore, clips: &[&Clip], chunk: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(clips.len());
        for part in clips.chunks(chunk.max(1)) {
            let mut tape = Tape::new();
            let p = store.bind_frozen(&mut tape);
            let e = self.embed(&mut tape, &p, part)?;
            out.extend(tape.value(e).data().chunks(self.embed_dim()).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, clips: &[&Clip], cross: Option<&CrossParams>) -> Result<Var> {
        if clips.is_empty() {
            return Err(Error::contract("no clips to encode"));
        }
        if cross.is_some_and(|c| c.spatial.len() != self.spatial.len() || c.temporal.len() != self.temporal.len()) {
            return Err(Error::Config("cross-attention depth differs from the encoder".into()));
        }
        let c = &self.config;
        let (rows, frames, d) = (clips.len(), c.frames, c.embed_dim);
        let (s, heads) = (c.patches_per_frame(), c.heads);

        let mut pixels = Vec::with_capacity(rows * frames * s * c.patch_dim());
        for clip in clips {
            self.check_clip(clip)?;
            pixels.extend(patchify(clip, c.patch_size)?.into_data());
        }
        let patches = tape.constant(Tensor::new(vec![rows * frames * s, c.patch_dim()], pixels)?);
        let tokens = self.patch.apply(tape, p, patches)?;
        let tokens = tape.reshape(tokens, &[rows * frames, s, d])?;
        let cls = tape.expand_leading(p[self.spatial_cls], rows * frames)?;
        let mut x = tape.concat(&[cls, tokens], 1)?;
        if let Some(ape) = &self.spatial_ape {
            x = ape.add_to(tape, p, x)?;
        }

        let (spatial_rots, temporal_rots) = match &self.liere {
            Some(l) => {
                let (nb, b) = (l.num_blocks, l.block);
                let sr = l.rotations(tape, p, &self.spatial_coords)?;
                let sr = tape.reshape(sr, &[frames, s + 1, nb, b, b])?;
                let tr = l.rotations(tape, p, &self.temporal_coords)?;
                let tr = tape.reshape(tr, &[1, frames + 1, nb, b, b])?;
                (Some(sr), Some(tr))
            }
            None => (None, None),
        };

        for (i, block) in self.spatial.iter().enumerate() {
            let cr = cross.map(|c| &c.spatial[i]);
            x = transformer_block(tape, p, block, x, spatial_rots, cr, heads)?;
        }
        let x = self.spatial_norm.apply(tape, p, x)?;
        let frame_repr = tape.slice(x, 1, 0, 1)?;
        let frame_repr = tape.reshape(frame_repr, &[rows, frames, d])?;

        let cls = tape.expand_leading(p[self.temporal_cls], rows)?;
        let mut x = tape.concat(&[cls, frame_repr], 1)?;
        if let Some(ape) = &self.temporal_ape {
            x = ape.add_to(tape, p, x)?;
        }
        for (i, block) in self.temporal.iter().enumerate() {
            let cr = cross.map(|c| &c.temporal[i]);
            x = transformer_block(tape, p, block, x, temporal_rots, cr, heads)?;
        }
        let x = self.temporal_norm.apply(tape, p, x)?;
        let out = tape.slice(x, 1, 0, 1)?;
        tape.reshape(out, &[rows, d])
    }
}
