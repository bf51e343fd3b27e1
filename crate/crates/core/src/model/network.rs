use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{trunc_normal, Bound, Graph, LayerNorm, Linear, NodeId, ParamId, ParamStore, Stack, Tensor, INIT_STD};
use crate::tokenizer::{sincos_2d, unshuffle_with_pad, PatchSet};

/// Handles to every parameter group of the network.
#[derive(Clone, Debug)]
pub struct Layout {
    pub audio_embed: Linear,
    pub visual_embed: Linear,
    pub audio_encoder: Stack,
    pub visual_encoder: Stack,
    pub audio_type: Option<ParamId>,
    pub visual_type: Option<ParamId>,
    pub cross: Stack,
    pub cross_norm: LayerNorm,
    pub decoder_embed: Linear,
    pub mask_token: ParamId,
    pub decoder_audio_type: Option<ParamId>,
    pub decoder_visual_type: Option<ParamId>,
    pub decoder: Stack,
    pub decoder_norm: LayerNorm,
    pub audio_recon: Linear,
    pub visual_recon: Linear,
    pub audio_labels: Linear,
    pub visual_labels: Linear,
}

/// Contrastive audio-visual masked autoencoder with label-prediction heads.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub layout: Layout,
    audio_pos: Tensor,
    visual_pos: Tensor,
    decoder_audio_pos: Tensor,
    decoder_visual_pos: Tensor,
}

/// Graph handles of one forward pass over a single clip.
#[derive(Clone, Copy, Debug)]
pub struct ForwardNodes {
    pub audio_ctx: NodeId,
    pub visual_ctx: NodeId,
    pub joint: NodeId,
    pub audio_pooled: NodeId,
    pub visual_pooled: NodeId,
    pub audio_recon: NodeId,
    pub visual_recon: NodeId,
    pub audio_probs: NodeId,
    pub visual_probs: NodeId,
}

/// Materialized forward pass over a single clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub audio_ctx: Tensor,
    pub visual_ctx: Tensor,
    pub joint: Tensor,
    pub audio_pooled: Tensor,
    pub visual_pooled: Tensor,
    pub audio_recon: Tensor,
    pub visual_recon: Tensor,
    pub audio_probs: Tensor,
    pub visual_probs: Tensor,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let c = &config;
        let (d, dd) = (c.embed_dim, c.decoder_dim);
        let (pa, pv) = (c.audio_patch_width(), c.visual_patch_width());

        let audio_embed = Linear::new(&mut p, "audio_embed", pa, d, true, &mut rng);
        let visual_embed = Linear::new(&mut p, "visual_embed", pv, d, true, &mut rng);
        let audio_encoder = Stack::new(&mut p, "audio_encoder", c.encoder_layers, d, c.heads, &mut rng)?;
        let visual_encoder = Stack::new(&mut p, "visual_encoder", c.encoder_layers, d, c.heads, &mut rng)?;
        let mut type_embed = |p: &mut ParamStore, name: &str, width: usize| {
            c.modality_embeddings.then(|| p.register(name, trunc_normal(&mut rng, &[1, width], INIT_STD)))
        };
        let audio_type = type_embed(&mut p, "audio_type", d);
        let visual_type = type_embed(&mut p, "visual_type", d);
        let cross = Stack::new(&mut p, "cross", c.cross_layers, d, c.heads, &mut rng)?;
        let cross_norm = LayerNorm::new(&mut p, "cross_norm", d);
        let decoder_embed = Linear::new(&mut p, "decoder_embed", d, dd, true, &mut rng);
        let mask_token = p.register("mask_token", trunc_normal(&mut rng, &[1, dd], INIT_STD));
        let mut type_embed = |p: &mut ParamStore, name: &str, width: usize| {
            c.modality_embeddings.then(|| p.register(name, trunc_normal(&mut rng, &[1, width], INIT_STD)))
        };
        let decoder_audio_type = type_embed(&mut p, "decoder_audio_type", dd);
        let decoder_visual_type = type_embed(&mut p, "decoder_visual_type", dd);
        let decoder = Stack::new(&mut p, "decoder", c.decoder_layers, dd, c.decoder_heads, &mut rng)?;
        let decoder_norm = LayerNorm::new(&mut p, "decoder_norm", dd);
        let audio_recon = Linear::new(&mut p, "audio_recon", dd, pa, true, &mut rng);
        let visual_recon = Linear::new(&mut p, "visual_recon", dd, pv, true, &mut rng);
        let audio_labels = Linear::new(&mut p, "audio_labels", d, c.num_labels, true, &mut rng);
        let visual_labels = Linear::new(&mut p, "visual_labels", d, c.num_labels, true, &mut rng);

        let (ar, ac) = c.audio_grid();
        let (vr, vc) = c.visual_grid();
        Ok(Model {
            audio_pos: sincos_2d(ar, ac, d),
            visual_pos: sincos_2d(vr, vc, d),
            decoder_audio_pos: sincos_2d(ar, ac, dd),
            decoder_visual_pos: sincos_2d(vr, vc, dd),
            config,
            params: p,
            layout: Layout {
                audio_embed,
                visual_embed,
                audio_encoder,
                visual_encoder,
                audio_type,
                visual_type,
                cross,
                cross_norm,
                decoder_embed,
                mask_token,
                decoder_audio_type,
                decoder_visual_type,
                decoder,
                decoder_norm,
                audio_recon,
                visual_recon,
                audio_labels,
                visual_labels,
            },
        })
    }

    fn check_set(&self, set: &PatchSet, width: usize, grid: (usize, usize), what: &str) -> Result<()> {
        if set.patches.cols() != width {
            return Err(Error::shape(format!("{what} patches are {} wide, model expects {width}", set.patches.cols())));
        }
        if (set.grid_rows, set.grid_cols) != grid || set.kept() != set.patches.rows() {
            return Err(Error::shape(format!(
                "{what} grid {}×{} with {} kept rows; model expects {}×{}",
                set.grid_rows,
                set.grid_cols,
                set.patches.rows(),
                grid.0,
                grid.1
            )));
        }
        Ok(())
    }

    fn encode_one(&self, g: &mut Graph, b: &Bound, set: &PatchSet, embed: &Linear, pos: &Tensor, stack: &Stack) -> Result<NodeId> {
        let x = g.constant(set.patches.clone());
        let x = embed.forward(g, b, x)?;
        let pos = g.constant(pos.select_rows(&set.kept_indices));
        let x = g.add(x, pos)?;
        stack.forward(g, b, x)
    }

    /// Uni-modal encoders: `(Â, V̂)`.
    pub fn encode(&self, g: &mut Graph, b: &Bound, audio: &PatchSet, visual: &PatchSet) -> Result<(NodeId, NodeId)> {
        let c = &self.config;
        self.check_set(audio, c.audio_patch_width(), c.audio_grid(), "audio")?;
        self.check_set(visual, c.visual_patch_width(), c.visual_grid(), "visual")?;
        let l = &self.layout;
        let a = self.encode_one(g, b, audio, &l.audio_embed, &self.audio_pos, &l.audio_encoder)?;
        let v = self.encode_one(g, b, visual, &l.visual_embed, &self.visual_pos, &l.visual_encoder)?;
        Ok((a, v))
    }

    fn with_type(&self, g: &mut Graph, b: &Bound, x: NodeId, t: Option<ParamId>) -> Result<NodeId> {
        match t {
            Some(t) => g.add_row(x, b.node(t)),
            None => Ok(x),
        }
    }

    fn cross_pass(&self, g: &mut Graph, b: &Bound, x: NodeId) -> Result<NodeId> {
        let y = self.layout.cross.forward(g, b, x)?;
        self.layout.cross_norm.forward(g, b, y)
    }

    /// Pooled single-modality embedding: the sequence alone through the
    /// shared cross-modal stack, then mean over positions.
    pub fn pool(&self, g: &mut Graph, b: &Bound, x: NodeId, modality_type: Option<ParamId>) -> Result<NodeId> {
        let x = self.with_type(g, b, x, modality_type)?;
        let y = self.cross_pass(g, b, x)?;
        Ok(g.mean_rows(y))
    }

    /// Joint sequence `Z` and pooled `(ā, v̄)`.
    pub fn cross_modal(&self, g: &mut Graph, b: &Bound, audio_ctx: NodeId, visual_ctx: NodeId) -> Result<(NodeId, NodeId, NodeId)> {
        let d = self.config.embed_dim;
        if g.shape(audio_ctx).1 != d || g.shape(visual_ctx).1 != d {
            return Err(Error::shape(format!(
                "cross-modal inputs of width {} and {}, expected {d}",
                g.shape(audio_ctx).1,
                g.shape(visual_ctx).1
            )));
        }
        let (at, vt) = (self.layout.audio_type, self.layout.visual_type);
        let a = self.with_type(g, b, audio_ctx, at)?;
        let v = self.with_type(g, b, visual_ctx, vt)?;
        let joint = g.concat_rows(&[a, v])?;
        let z = self.cross_pass(g, b, joint)?;
        let a_bar = self.pool(g, b, audio_ctx, at)?;
        let v_bar = self.pool(g, b, visual_ctx, vt)?;
        Ok((z, a_bar, v_bar))
    }

    /// Pads masked positions with the mask token, decodes jointly, and
    /// projects back to patch space: `(A_r, V_r)` over full grids.
    pub fn decode(&self, g: &mut Graph, b: &Bound, z: NodeId, audio: &PatchSet, visual: &PatchSet) -> Result<(NodeId, NodeId)> {
        let (na, nv) = (audio.kept(), visual.kept());
        if g.shape(z).0 != na + nv {
            return Err(Error::contract(format!("joint sequence has {} rows, patch sets keep {na}+{nv}", g.shape(z).0)));
        }
        if audio.total() != self.config.audio_patches() || visual.total() != self.config.visual_patches() {
            return Err(Error::contract("patch sets do not match the configured grids"));
        }
        let l = &self.layout;
        let h = l.decoder_embed.forward(g, b, z)?;
        let ha = g.slice_rows(h, 0, na)?;
        let hv = g.slice_rows(h, na, nv)?;
        let mask = b.node(l.mask_token);
        let apos = g.constant(self.decoder_audio_pos.clone());
        let vpos = g.constant(self.decoder_visual_pos.clone());
        let fa = unshuffle_with_pad(g, ha, audio, mask, apos)?;
        let fv = unshuffle_with_pad(g, hv, visual, mask, vpos)?;
        let fa = self.with_type(g, b, fa, l.decoder_audio_type)?;
        let fv = self.with_type(g, b, fv, l.decoder_visual_type)?;
        let seq = g.concat_rows(&[fa, fv])?;
        let y = l.decoder.forward(g, b, seq)?;
        let y = l.decoder_norm.forward(g, b, y)?;
        let (ta, tv) = (audio.total(), visual.total());
        let ya = g.slice_rows(y, 0, ta)?;
        let yv = g.slice_rows(y, ta, tv)?;
        Ok((l.audio_recon.forward(g, b, ya)?, l.visual_recon.forward(g, b, yv)?))
    }

    /// Label probabilities `(ŷ_a, ŷ_v)` from unnormalized pooled embeddings.
    pub fn predict_labels(&self, g: &mut Graph, b: &Bound, a_bar: NodeId, v_bar: NodeId) -> Result<(NodeId, NodeId)> {
        let la = self.layout.audio_labels.forward(g, b, a_bar)?;
        let lv = self.layout.visual_labels.forward(g, b, v_bar)?;
        Ok((g.sigmoid(la), g.sigmoid(lv)))
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, audio: &PatchSet, visual: &PatchSet) -> Result<ForwardNodes> {
        let (audio_ctx, visual_ctx) = self.encode(g, b, audio, visual)?;
        let (joint, audio_pooled, visual_pooled) = self.cross_modal(g, b, audio_ctx, visual_ctx)?;
        let (audio_recon, visual_recon) = self.decode(g, b, joint, audio, visual)?;
        let (audio_probs, visual_probs) = self.predict_labels(g, b, audio_pooled, visual_pooled)?;
        Ok(ForwardNodes {
            audio_ctx,
            visual_ctx,
            joint,
            audio_pooled,
            visual_pooled,
            audio_recon,
            visual_recon,
            audio_probs,
            visual_probs,
        })
    }

    pub fn forward_values(&self, audio: &PatchSet, visual: &PatchSet) -> Result<ForwardOutput> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let n = self.forward(&mut g, &b, audio, visual)?;
        let v = |id| g.value(id).clone();
        Ok(ForwardOutput {
            audio_ctx: v(n.audio_ctx),
            visual_ctx: v(n.visual_ctx),
            joint: v(n.joint),
            audio_pooled: v(n.audio_pooled),
            visual_pooled: v(n.visual_pooled),
            audio_recon: v(n.audio_recon),
            visual_recon: v(n.visual_recon),
            audio_probs: v(n.audio_probs),
            visual_probs: v(n.visual_probs),
        })
    }

    /// Pooled `(ā, v̄)` only, skipping the joint pass and decoder.
    pub fn embed(&self, audio: &PatchSet, visual: &PatchSet) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let (a, v) = self.encode(&mut g, &b, audio, visual)?;
        let a_bar = self.pool(&mut g, &b, a, self.layout.audio_type)?;
        let v_bar = self.pool(&mut g, &b, v, self.layout.visual_type)?;
        Ok((g.value(a_bar).data().to_vec(), g.value(v_bar).data().to_vec()))
    }

    /// Parameter groups for gradient-coverage checks: name prefix → ids.
    pub fn groups(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        let prefix_ids = |prefixes: &[&str]| -> Vec<ParamId> {
            self.params
                .ids()
                .filter(|&id| prefixes.iter().any(|p| self.params.name(id).starts_with(p)))
                .collect()
        };
        vec![
            ("patch_embed", prefix_ids(&["audio_embed.", "visual_embed."])),
            ("audio_encoder", prefix_ids(&["audio_encoder."])),
            ("visual_encoder", prefix_ids(&["visual_encoder."])),
            ("cross", prefix_ids(&["cross.", "cross_norm."])),
            ("decoder", prefix_ids(&["decoder_embed.", "decoder.", "decoder_norm.", "audio_recon.", "visual_recon."])),
            ("audio_labels", prefix_ids(&["audio_labels."])),
            ("visual_labels", prefix_ids(&["visual_labels."])),
            ("mask_token", prefix_ids(&["mask_token"])),
        ]
    }
}
