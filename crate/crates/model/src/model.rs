//! Dual-stream gaze pyramid transformer with a tri-plane zone branch.
//!
//! Each stream pools its image into four pyramid levels, projects every
//! level to width `d` and aggregates them with learnable tokens in a
//! transformer. The original stream carries two tokens (`f_final`,
//! `f_visual`), the normalized stream one. The two final features are fused
//! with camera-pose encodings; the fused gaze, mapped back to the original
//! space, is intersected with the tri-plane (no gradient flows through the
//! intersection) and the encoded hits feed the zone classifier together with
//! the visual feature.

use cabingaze_core::annotate::{vec_from_yawpitch, Zone};
use cabingaze_core::geom::{Rotation, Vec3};
use cabingaze_core::raster::Raster;
use cabingaze_core::triplane::{encode_hit, intersect_triplane_with, positional_encoding, TriPlaneConfig, TriPlaneHit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, LEVEL_STRIDES};
use crate::nn::{add_into, Init, LayoutBuilder, Linear, Mlp, MlpCache, ParamLayout, Transformer, TransformerLayerCache};
use crate::ModelError;

pub const LEVELS: usize = 4;
pub const GAZE_TERMS: usize = 11;
pub const ZONE_TERMS: usize = 3;
/// Scale used when encoding camera z-axes (unit vectors).
const POSE_SCALE: f64 = 2.0;
const TOKEN_SIGMA: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    Original,
    Normalized,
}

/// The eleven supervised gaze predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GazeTerm {
    Level(StreamKind, usize),
    Final(StreamKind),
    Fused,
}

impl GazeTerm {
    pub const ALL: [GazeTerm; GAZE_TERMS] = [
        GazeTerm::Level(StreamKind::Original, 0),
        GazeTerm::Level(StreamKind::Original, 1),
        GazeTerm::Level(StreamKind::Original, 2),
        GazeTerm::Level(StreamKind::Original, 3),
        GazeTerm::Level(StreamKind::Normalized, 0),
        GazeTerm::Level(StreamKind::Normalized, 1),
        GazeTerm::Level(StreamKind::Normalized, 2),
        GazeTerm::Level(StreamKind::Normalized, 3),
        GazeTerm::Final(StreamKind::Original),
        GazeTerm::Final(StreamKind::Normalized),
        GazeTerm::Fused,
    ];

    pub fn index(self) -> usize {
        match self {
            GazeTerm::Level(StreamKind::Original, l) => l,
            GazeTerm::Level(StreamKind::Normalized, l) => 4 + l,
            GazeTerm::Final(StreamKind::Original) => 8,
            GazeTerm::Final(StreamKind::Normalized) => 9,
            GazeTerm::Fused => 10,
        }
    }

    /// Space the prediction lives in.
    pub fn space(self) -> StreamKind {
        match self {
            GazeTerm::Level(s, _) | GazeTerm::Final(s) => s,
            GazeTerm::Fused => StreamKind::Normalized,
        }
    }

    pub fn name(self) -> String {
        let s = |k: StreamKind| match k {
            StreamKind::Original => "original",
            StreamKind::Normalized => "normalized",
        };
        match self {
            GazeTerm::Level(k, l) => format!("{}.level{}", s(k), l + 1),
            GazeTerm::Final(k) => format!("{}.final", s(k)),
            GazeTerm::Fused => "fused".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZoneTerm {
    Positional,
    Visual,
    Fused,
}

impl ZoneTerm {
    pub const ALL: [ZoneTerm; ZONE_TERMS] = [ZoneTerm::Positional, ZoneTerm::Visual, ZoneTerm::Fused];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Model inputs for one frame.
#[derive(Debug, Clone)]
pub struct Sample {
    pub original: Raster,
    pub normalized: Raster,
    /// Normalization rotation (original → normalized space).
    pub rotation: Rotation,
    /// Face center in the original camera frame, meters.
    pub face_center: Vec3,
    pub labels: Labels,
}

/// Yaw/pitch targets in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Labels {
    pub gaze_o: Option<[f64; 2]>,
    pub gaze_n: Option<[f64; 2]>,
    pub zone: Option<Zone>,
}

/// Predictions of one forward pass. Gaze values are `(yaw, pitch)` in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub gaze: [[f64; 2]; GAZE_TERMS],
    pub zone_logits: [[f64; Zone::COUNT]; ZONE_TERMS],
    /// Fused prediction converted to the original space (unit vector).
    pub gaze_o: Vec3,
    pub hit: TriPlaneHit,
}

impl Outputs {
    pub fn gaze_of(&self, t: GazeTerm) -> [f64; 2] {
        self.gaze[t.index()]
    }

    pub fn zone_probabilities(&self, t: ZoneTerm) -> [f64; Zone::COUNT] {
        crate::loss::softmax(&self.zone_logits[t.index()])
    }

    pub fn zone_prediction(&self, t: ZoneTerm) -> Zone {
        let l = &self.zone_logits[t.index()];
        let best = (0..Zone::COUNT).fold(0, |b, i| if l[i] > l[b] { i } else { b });
        Zone::from_index(best).expect("class index")
    }
}

pub fn yawpitch_to_vec(yp: [f64; 2]) -> Vec3 {
    vec_from_yawpitch(yp[0].to_degrees(), yp[1].to_degrees())
}

/// One image stream: level projections, optional level embeddings,
/// learnable tokens and the aggregation transformer.
#[derive(Debug, Clone)]
pub struct Stream {
    pub levels: Vec<Linear>,
    pub level_emb: Option<usize>,
    pub tokens: usize,
    pub n_tokens: usize,
    pub transformer: Transformer,
    d: usize,
}

#[derive(Debug, Clone)]
struct StreamCache {
    pooled: Vec<Vec<f64>>,
    tf: Vec<TransformerLayerCache>,
}

/// Mean over `s × s` blocks, row-major over the block grid.
pub fn avg_pool(img: &Raster, s: usize) -> Vec<f64> {
    let (gw, gh) = (img.width() / s, img.height() / s);
    let norm = 1.0 / (s * s) as f64;
    let mut out = vec![0.0; gw * gh];
    for gy in 0..gh {
        for gx in 0..gw {
            let mut acc = 0.0;
            for y in gy * s..(gy + 1) * s {
                for x in gx * s..(gx + 1) * s {
                    acc += img.get(x, y);
                }
            }
            out[gy * gw + gx] = acc * norm;
        }
    }
    out
}

impl Stream {
    fn new(lb: &mut LayoutBuilder, name: &str, cfg: &ModelConfig, n_tokens: usize) -> Self {
        let d = cfg.width;
        let levels = (0..LEVELS)
            .map(|i| Linear::new(lb, &format!("{name}.level{}", i + 1), cfg.level_grid(i), d))
            .collect();
        let level_emb = cfg
            .level_embeddings
            .then(|| lb.add(format!("{name}.level_embedding"), LEVELS * d, Init::Gaussian(TOKEN_SIGMA)));
        let tokens = lb.add(format!("{name}.tokens"), n_tokens * d, Init::Gaussian(TOKEN_SIGMA));
        let transformer = Transformer::new(lb, &format!("{name}.transformer"), d, cfg.heads, cfg.stream_layers);
        Self { levels, level_emb, tokens, n_tokens, transformer, d }
    }

    /// Projected pyramid features, one `d`-vector per level.
    pub fn pyramid_features(&self, p: &[f64], img: &Raster) -> Vec<Vec<f64>> {
        self.pyramid_with_pooled(p, img).0
    }

    fn pyramid_with_pooled(&self, p: &[f64], img: &Raster) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let pooled: Vec<Vec<f64>> = LEVEL_STRIDES.iter().map(|&s| avg_pool(img, s)).collect();
        let feats = self.levels.iter().zip(&pooled).map(|(l, x)| l.forward(p, x)).collect();
        (feats, pooled)
    }

    /// Runs the aggregation transformer over `tokens ∥ features` and returns
    /// the token outputs.
    pub fn aggregate(&self, p: &[f64], features: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.aggregate_cached(p, features).0
    }

    fn aggregate_cached(&self, p: &[f64], features: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<TransformerLayerCache>) {
        let d = self.d;
        let mut seq = p[self.tokens..self.tokens + self.n_tokens * d].to_vec();
        for (i, f) in features.iter().enumerate() {
            let mut row = f.clone();
            if let Some(e) = self.level_emb {
                add_into(&mut row, &p[e + i * d..e + (i + 1) * d]);
            }
            seq.extend(row);
        }
        let (out, tf) = self.transformer.forward(p, &seq);
        let tokens = (0..self.n_tokens).map(|t| out[t * d..(t + 1) * d].to_vec()).collect();
        (tokens, tf)
    }

    fn forward(&self, p: &[f64], img: &Raster) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, StreamCache) {
        let (feats, pooled) = self.pyramid_with_pooled(p, img);
        let (tokens, tf) = self.aggregate_cached(p, &feats);
        (feats, tokens, StreamCache { pooled, tf })
    }

    fn backward(&self, p: &[f64], c: &StreamCache, d_feats: &[Vec<f64>], d_tokens: &[Vec<f64>], g: &mut [f64]) {
        let d = self.d;
        let n = self.n_tokens + LEVELS;
        let mut dout = vec![0.0; n * d];
        for (t, dt) in d_tokens.iter().enumerate() {
            dout[t * d..(t + 1) * d].copy_from_slice(dt);
        }
        let dseq = self.transformer.backward(p, &c.tf, &dout, g);
        add_into(&mut g[self.tokens..self.tokens + self.n_tokens * d], &dseq[..self.n_tokens * d]);
        for i in 0..LEVELS {
            let row = &dseq[(self.n_tokens + i) * d..(self.n_tokens + i + 1) * d];
            if let Some(e) = self.level_emb {
                add_into(&mut g[e + i * d..e + (i + 1) * d], row);
            }
            let mut df = d_feats[i].clone();
            add_into(&mut df, row);
            self.levels[i].backward(p, &c.pooled[i], &df, g);
        }
    }
}

#[derive(Debug, Clone)]
pub struct GazeModel {
    pub cfg: ModelConfig,
    pub triplane: TriPlaneConfig,
    pub layout: ParamLayout,
    pub original: Stream,
    pub normalized: Stream,
    pub pose_proj: Linear,
    pub fusion: Transformer,
    pub point_proj: Linear,
    pub plane_emb: usize,
    pub pos_token: usize,
    pub positional: Transformer,
    pub zone_tf: Transformer,
    pub gaze_heads: Vec<Mlp>,
    pub zone_heads: Vec<Mlp>,
}

/// Everything backward needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    original: StreamCache,
    normalized: StreamCache,
    pose_enc: [Vec<f64>; 2],
    fusion: Vec<TransformerLayerCache>,
    point_enc: Vec<f64>,
    positional: Vec<TransformerLayerCache>,
    zone_tf: Vec<TransformerLayerCache>,
    gaze_heads: Vec<MlpCache>,
    zone_heads: Vec<MlpCache>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub outputs: Outputs,
    pub cache: Cache,
}

/// Named parameter groups, for gradient inspection.
pub mod groups {
    pub const ORIGINAL_STREAM: &str = "stream_o.";
    pub const NORMALIZED_STREAM: &str = "stream_n.";
    pub const POSE_PROJECTION: &str = "pose_proj.";
    pub const FUSION: &str = "fusion.";
    pub const FUSED_GAZE_HEAD: &str = "gaze_head.fused.";
    pub const POINT_PROJECTION: &str = "point_proj.";
    pub const POSITIONAL: &str = "positional.";
    pub const ZONE_TRANSFORMER: &str = "zone_tf.";
}

impl GazeModel {
    pub fn new(cfg: &ModelConfig, triplane: &TriPlaneConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        triplane.validate().map_err(ModelError::Config)?;
        let d = cfg.width;
        let mut lb = LayoutBuilder::default();
        let original = Stream::new(&mut lb, "stream_o", cfg, 2);
        let normalized = Stream::new(&mut lb, "stream_n", cfg, 1);
        let pose_dim = 3 * 2 * cfg.pose_bands;
        let pose_proj = Linear::new(&mut lb, "pose_proj", pose_dim, d);
        let fusion = Transformer::new(&mut lb, "fusion", d, cfg.heads, cfg.fusion_layers);
        let point_dim = triplane.encoded_len() / 3;
        let point_proj = Linear::new(&mut lb, "point_proj", point_dim, d);
        let plane_emb = lb.add("positional.plane_embedding", 3 * d, Init::Gaussian(TOKEN_SIGMA));
        let pos_token = lb.add("positional.token", d, Init::Gaussian(TOKEN_SIGMA));
        let positional = Transformer::new(&mut lb, "positional.transformer", d, cfg.heads, cfg.positional_layers);
        let zone_tf = Transformer::new(&mut lb, "zone_tf", d, cfg.heads, cfg.zone_layers);
        let gaze_heads = GazeTerm::ALL
            .iter()
            .map(|t| Mlp::new(&mut lb, &format!("gaze_head.{}", t.name()), d, cfg.head_hidden, 2))
            .collect();
        let zone_heads = ["positional", "visual", "fused"]
            .iter()
            .map(|n| Mlp::new(&mut lb, &format!("zone_head.{n}"), d, cfg.head_hidden, Zone::COUNT))
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            triplane: *triplane,
            layout: lb.finish(),
            original,
            normalized,
            pose_proj,
            fusion,
            point_proj,
            plane_emb,
            pos_token,
            positional,
            zone_tf,
            gaze_heads,
            zone_heads,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        self.layout.initialize(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn stream(&self, k: StreamKind) -> &Stream {
        match k {
            StreamKind::Original => &self.original,
            StreamKind::Normalized => &self.normalized,
        }
    }

    fn check_image(&self, img: &Raster) -> Result<(), ModelError> {
        img.ensure_shape(self.cfg.image_width, self.cfg.image_height)?;
        Ok(())
    }

    /// Encoded camera z-axis.
    pub fn pose_encoding(&self, z_axis: &Vec3) -> Vec<f64> {
        positional_encoding(std::slice::from_ref(z_axis), self.cfg.pose_bands, POSE_SCALE)
    }

    /// Pose z-axes of the two streams: identity for the original camera and
    /// the normalization rotation for the virtual one (its third row, the
    /// virtual optical axis in original coordinates).
    pub fn stream_pose_axes(rotation: &Rotation) -> [Vec3; 2] {
        [Vec3::z(), rotation.row(2)]
    }

    /// Fuses the two stream features with their pose encodings; returns
    /// `f_gaze` (mean of the two fusion outputs).
    pub fn fuse_dual_stream(&self, p: &[f64], f_n: &[f64], f_o: &[f64], z_n: &Vec3, z_o: &Vec3) -> Vec<f64> {
        let pe = [self.pose_encoding(z_n), self.pose_encoding(z_o)];
        self.fuse_cached(p, f_n, f_o, &pe).0
    }

    fn fuse_cached(&self, p: &[f64], f_n: &[f64], f_o: &[f64], pe: &[Vec<f64>; 2]) -> (Vec<f64>, Vec<TransformerLayerCache>) {
        let d = self.cfg.width;
        let mut seq = f_n.to_vec();
        add_into(&mut seq, &self.pose_proj.forward(p, &pe[0]));
        let mut second = f_o.to_vec();
        add_into(&mut second, &self.pose_proj.forward(p, &pe[1]));
        seq.extend(second);
        let (out, c) = self.fusion.forward(p, &seq);
        let f: Vec<f64> = (0..d).map(|i| 0.5 * (out[i] + out[d + i])).collect();
        (f, c)
    }

    pub fn forward(&self, p: &[f64], s: &Sample) -> Result<Forward, ModelError> {
        self.forward_impl(p, s, None)
    }

    /// Forward pass with the tri-plane hit replaced by `hit`. Finite
    /// differences through this function see the same stop-gradient as
    /// [`GazeModel::backward`].
    pub fn forward_with_hit(&self, p: &[f64], s: &Sample, hit: &TriPlaneHit) -> Result<Forward, ModelError> {
        self.forward_impl(p, s, Some(hit))
    }

    fn forward_impl(&self, p: &[f64], s: &Sample, frozen: Option<&TriPlaneHit>) -> Result<Forward, ModelError> {
        if p.len() != self.param_count() {
            return Err(ModelError::Config(format!(
                "parameter vector has {} entries, model needs {}",
                p.len(),
                self.param_count()
            )));
        }
        self.check_image(&s.original)?;
        self.check_image(&s.normalized)?;
        let d = self.cfg.width;

        let (feats_o, tokens_o, original) = self.original.forward(p, &s.original);
        let (feats_n, tokens_n, normalized) = self.normalized.forward(p, &s.normalized);

        let [z_o, z_n] = Self::stream_pose_axes(&s.rotation);
        let pose_enc = [self.pose_encoding(&z_n), self.pose_encoding(&z_o)];
        let (f_gaze, fusion) = self.fuse_cached(p, &tokens_n[0], &tokens_o[0], &pose_enc);

        let mut gaze = [[0.0; 2]; GAZE_TERMS];
        let mut gaze_heads = Vec::with_capacity(GAZE_TERMS);
        for t in GazeTerm::ALL {
            let input: &[f64] = match t {
                GazeTerm::Level(StreamKind::Original, l) => &feats_o[l],
                GazeTerm::Level(StreamKind::Normalized, l) => &feats_n[l],
                GazeTerm::Final(StreamKind::Original) => &tokens_o[0],
                GazeTerm::Final(StreamKind::Normalized) => &tokens_n[0],
                GazeTerm::Fused => &f_gaze,
            };
            let (y, c) = self.gaze_heads[t.index()].forward(p, input);
            gaze[t.index()] = [y[0], y[1]];
            gaze_heads.push(c);
        }

        // Tri-plane path; values only, no gradient.
        let g_n = yawpitch_to_vec(gaze[GazeTerm::Fused.index()]);
        let gaze_o = s.rotation.transpose().apply(&g_n);
        let hit = match frozen {
            Some(h) => *h,
            None => intersect_triplane_with(&s.face_center, &gaze_o, self.triplane.forward_only),
        };
        let point_enc = encode_hit(&hit, &self.triplane);
        let mut seq = p[self.pos_token..self.pos_token + d].to_vec();
        let mut points = self.point_proj.forward(p, &point_enc);
        add_into(&mut points, &p[self.plane_emb..self.plane_emb + 3 * d]);
        seq.extend(points);
        let (pos_out, positional) = self.positional.forward(p, &seq);
        let f_pos = pos_out[..d].to_vec();

        let tokens_visual = &tokens_o[1];
        let mut zseq = f_pos.clone();
        zseq.extend_from_slice(tokens_visual);
        let (zout, zone_tf) = self.zone_tf.forward(p, &zseq);
        let f_zone: Vec<f64> = (0..d).map(|i| 0.5 * (zout[i] + zout[d + i])).collect();

        let mut zone_logits = [[0.0; Zone::COUNT]; ZONE_TERMS];
        let mut zone_heads = Vec::with_capacity(ZONE_TERMS);
        for (t, input) in ZoneTerm::ALL.iter().zip([&f_pos, tokens_visual, &f_zone]) {
            let (y, c) = self.zone_heads[t.index()].forward(p, input);
            zone_logits[t.index()].copy_from_slice(&y);
            zone_heads.push(c);
        }

        Ok(Forward {
            outputs: Outputs { gaze, zone_logits, gaze_o, hit },
            cache: Cache {
                original,
                normalized,
                pose_enc,
                fusion,
                point_enc,
                positional,
                zone_tf,
                gaze_heads,
                zone_heads,
            },
        })
    }

    /// Reverse-mode gradient given `∂L/∂gaze` and `∂L/∂logits`; accumulates
    /// into `g`.
    pub fn backward(
        &self,
        p: &[f64],
        c: &Cache,
        d_gaze: &[[f64; 2]; GAZE_TERMS],
        d_logits: &[[f64; Zone::COUNT]; ZONE_TERMS],
        g: &mut [f64],
    ) {
        let d = self.cfg.width;
        let zeros = || vec![0.0; d];

        // Zone branch.
        let mut d_fpos = zeros();
        let mut d_visual = zeros();
        let mut d_fzone = zeros();
        for t in ZoneTerm::ALL {
            let dl = &d_logits[t.index()];
            if dl.iter().all(|&v| v == 0.0) {
                continue;
            }
            let dx = self.zone_heads[t.index()].backward(p, &c.zone_heads[t.index()], dl, g);
            match t {
                ZoneTerm::Positional => add_into(&mut d_fpos, &dx),
                ZoneTerm::Visual => add_into(&mut d_visual, &dx),
                ZoneTerm::Fused => add_into(&mut d_fzone, &dx),
            }
        }
        let mut dz = vec![0.0; 2 * d];
        for i in 0..d {
            dz[i] = 0.5 * d_fzone[i];
            dz[d + i] = 0.5 * d_fzone[i];
        }
        let dzseq = self.zone_tf.backward(p, &c.zone_tf, &dz, g);
        add_into(&mut d_fpos, &dzseq[..d]);
        add_into(&mut d_visual, &dzseq[d..]);

        let mut dpos = vec![0.0; 4 * d];
        dpos[..d].copy_from_slice(&d_fpos);
        let dseq = self.positional.backward(p, &c.positional, &dpos, g);
        add_into(&mut g[self.pos_token..self.pos_token + d], &dseq[..d]);
        add_into(&mut g[self.plane_emb..self.plane_emb + 3 * d], &dseq[d..]);
        // The point encodings are constants: their input gradient is dropped.
        let _ = self.point_proj.backward(p, &c.point_enc, &dseq[d..], g);

        // Gaze heads.
        let mut d_feats_o = vec![zeros(); LEVELS];
        let mut d_feats_n = vec![zeros(); LEVELS];
        let mut d_final_o = zeros();
        let mut d_final_n = zeros();
        let mut d_fgaze = zeros();
        for t in GazeTerm::ALL {
            let dy = &d_gaze[t.index()];
            if dy.iter().all(|&v| v == 0.0) {
                continue;
            }
            let dx = self.gaze_heads[t.index()].backward(p, &c.gaze_heads[t.index()], dy, g);
            let dst = match t {
                GazeTerm::Level(StreamKind::Original, l) => &mut d_feats_o[l],
                GazeTerm::Level(StreamKind::Normalized, l) => &mut d_feats_n[l],
                GazeTerm::Final(StreamKind::Original) => &mut d_final_o,
                GazeTerm::Final(StreamKind::Normalized) => &mut d_final_n,
                GazeTerm::Fused => &mut d_fgaze,
            };
            add_into(dst, &dx);
        }

        let mut dfu = vec![0.0; 2 * d];
        for i in 0..d {
            dfu[i] = 0.5 * d_fgaze[i];
            dfu[d + i] = 0.5 * d_fgaze[i];
        }
        let dfseq = self.fusion.backward(p, &c.fusion, &dfu, g);
        add_into(&mut d_final_n, &dfseq[..d]);
        add_into(&mut d_final_o, &dfseq[d..]);
        let _ = self.pose_proj.backward(p, &c.pose_enc[0], &dfseq[..d], g);
        let _ = self.pose_proj.backward(p, &c.pose_enc[1], &dfseq[d..], g);

        self.original.backward(p, &c.original, &d_feats_o, &[d_final_o, d_visual], g);
        self.normalized.backward(p, &c.normalized, &d_feats_n, &[d_final_n], g);
    }
}
