"""Architecture specification: every layer, width and resolution of the toy stack.

The spec is plain data serialized as canonical JSON; its SHA-256 is folded into
weight fingerprints so a weight file can never silently pair with a different
topology. `weight_shapes()` is the single ordered source of truth for what a
WeightStore must contain.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict

from ..errors import DimensionError

# Per-channel affine applied to the synthesis head output so an untrained
# prior decodes to a sane head: bounded offsets, texel-sized splats, mostly
# opaque, mid-gray. Order matches uvmap.ATTRIBUTE_CHANNELS.
DEFAULT_ATTR_GAINS = (0.5, 0.5, 0.5, 0.15, 0.15, 0.15,
                      1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
DEFAULT_ATTR_BIASES = (0.0, 0.0, 0.0, -5.4, -5.4, -5.4,
                       0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ArchitectureSpec:
    # image encoder (16x16 patch grid over 256x256 inputs)
    image_size: int = 256
    embed_widths: tuple = (16, 32, 64)
    embed_dim: int = 64
    # transformer branches over vertex queries + identity tokens
    vertex_count: int = 2306
    geo_dim: int = 32
    geo_blocks: int = 2
    app_dim: int = 16
    app_blocks: int = 1
    id_tokens: int = 4
    ff_mult: int = 2
    # q/k projections init hot so untrained attention is selective rather than
    # uniform; otherwise localized sketch changes average away over the tokens.
    # Queries start small and the value/output path hot so branch outputs are
    # dominated by image-conditioned signal rather than the constant queries.
    attn_qk_gain: float = 2.5
    attn_value_gain: float = 2.0
    query_init_std: float = 0.3
    # relative positional prior: vertex queries prefer the image patches their
    # canonical projection lands on (Gaussian falloff in patch units)
    pos_bias_sigma: float = 1.5
    pos_bias_gain: float = 5.0
    # UV stage
    uv_resolution: int = 128
    align_hidden: int = 64
    # modulation U-Net
    unet_stem: int = 16
    unet_enc: tuple = (16, 24, 48, 96, 128)
    unet_dec: tuple = (96, 64, 48, 24, 16)
    latent_dim: int = 128
    # style-modulated synthesis stack
    synth_resolutions: tuple = (4, 8, 16, 32, 64, 128)
    synth_channels: tuple = (128, 64, 32, 16, 8, 14)
    style_dim: int = 64
    # per-layer injection gains: coarse levels carry sketch structure at full
    # strength; fine levels stay feature-driven so in-context synthesis (not
    # direct detail pass-through) decides texel content near edit boundaries
    spatial_mod_gains: tuple = (0.5, 0.5, 0.5, 0.5, 0.3, 0.15)
    attr_gains: tuple = DEFAULT_ATTR_GAINS
    attr_biases: tuple = DEFAULT_ATTR_BIASES

    @property
    def patch_grid(self) -> int:
        return self.image_size // 16

    @property
    def n_layers(self) -> int:
        return len(self.synth_resolutions)

    @property
    def coarse_channels(self) -> int:
        return 2 * self.geo_dim  # geometry map concatenated with the aligned map

    def __post_init__(self):
        if len(self.synth_resolutions) != len(self.synth_channels):
            raise DimensionError("synth_resolutions and synth_channels length mismatch")
        for a, b in zip(self.synth_resolutions[:-1], self.synth_resolutions[1:]):
            if b != 2 * a:
                raise DimensionError("synth resolutions must double per layer")
        if self.synth_resolutions[-1] != self.uv_resolution:
            raise DimensionError("final synthesis resolution must equal uv_resolution")
        if self.synth_channels[-1] != 14:
            raise DimensionError("final synthesis layer must emit the 14 attribute channels")
        if len(self.unet_enc) != len(self.unet_dec):
            raise DimensionError("unet encoder/decoder depth mismatch")
        if len(self.attr_gains) != 14 or len(self.attr_biases) != 14:
            raise DimensionError("attribute prior affine must cover 14 channels")
        if len(self.spatial_mod_gains) != len(self.synth_resolutions):
            raise DimensionError("spatial_mod_gains must cover every synthesis layer")

    # -- serialization -----------------------------------------------------

    def to_json_text(self) -> str:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return json.dumps(d, sort_keys=True, indent=1)

    @staticmethod
    def from_json_text(text: str) -> "ArchitectureSpec":
        d = json.loads(text)
        for k, v in list(d.items()):
            if isinstance(v, list):
                d[k] = tuple(v)
        return ArchitectureSpec(**d)

    def sha(self) -> str:
        return hashlib.sha256(self.to_json_text().encode("utf-8")).hexdigest()

    # -- weight layout -----------------------------------------------------

    def weight_shapes(self):
        """Ordered (name, shape, init) triples; init in {conv, linear,
        linear_qk, linear_hot, queries, normal, zeros, ones}. This order
        defines the RNG draw order of init_weights."""
        out = []

        def conv(name, cout, cin, k):
            out.append((f"{name}.weight", (cout, cin, k, k), "conv"))
            out.append((f"{name}.bias", (cout,), "zeros"))

        def linear(name, cin, cout, bias_init="zeros"):
            out.append((f"{name}.w", (cin, cout), "linear"))
            out.append((f"{name}.b", (cout,), bias_init))

        # patch embedder (shared between sketch and reference inputs)
        w0, w1, w2 = self.embed_widths
        conv("embed.conv0", w0, 3, 3)
        conv("embed.conv1", w1, w0, 3)
        conv("embed.conv2", w2, w1, 3)
        conv("embed.conv3", self.embed_dim, w2, 3)

        # transformer branches
        for branch, dim, blocks in (("geo", self.geo_dim, self.geo_blocks),
                                    ("app", self.app_dim, self.app_blocks)):
            out.append((f"{branch}.queries", (self.vertex_count, dim), "queries"))
            out.append((f"{branch}.id_tokens", (self.id_tokens, dim), "queries"))
            for b in range(blocks):
                p = f"{branch}.block{b}"
                out.append((f"{p}.ln1.gamma", (dim,), "ones"))
                out.append((f"{p}.ln1.beta", (dim,), "zeros"))
                out.append((f"{p}.attn.q.w", (dim, dim), "linear_qk"))
                out.append((f"{p}.attn.q.b", (dim,), "zeros"))
                out.append((f"{p}.attn.k.w", (self.embed_dim, dim), "linear_qk"))
                out.append((f"{p}.attn.k.b", (dim,), "zeros"))
                out.append((f"{p}.attn.v.w", (self.embed_dim, dim), "linear_hot"))
                out.append((f"{p}.attn.v.b", (dim,), "zeros"))
                out.append((f"{p}.attn.o.w", (dim, dim), "linear_hot"))
                out.append((f"{p}.attn.o.b", (dim,), "zeros"))
                out.append((f"{p}.ln2.gamma", (dim,), "ones"))
                out.append((f"{p}.ln2.beta", (dim,), "zeros"))
                linear(f"{p}.ff.1", dim, dim * self.ff_mult)
                linear(f"{p}.ff.2", dim * self.ff_mult, dim)
            out.append((f"{branch}.final_ln.gamma", (dim,), "ones"))
            out.append((f"{branch}.final_ln.beta", (dim,), "zeros"))

        # AdaIN alignment network
        linear("align.stats.1", self.app_dim, self.align_hidden)
        linear("align.stats.2", self.align_hidden, 2 * self.geo_dim)
        conv("align.refine", self.geo_dim, self.geo_dim, 3)

        # modulation U-Net
        conv("unet.stem", self.unet_stem, self.coarse_channels, 1)
        prev = self.unet_stem
        for i, ch in enumerate(self.unet_enc):
            conv(f"unet.enc{i}", ch, prev, 3)
            prev = ch
        conv("unet.bottleneck", self.unet_enc[-1], self.unet_enc[-1], 3)
        linear("unet.latent", self.unet_enc[-1], self.latent_dim)
        out.append(("unet.pyr0.weight",
                    (self.synth_channels[0], self.unet_enc[-1], 1, 1), "conv"))
        out.append(("unet.pyr0.bias", (self.synth_channels[0],), "zeros"))
        carry = self.unet_enc[-1]
        for i, ch in enumerate(self.unet_dec):
            skip_ch = self.unet_skip_channels()[i]
            conv(f"unet.dec{i + 1}", ch, carry + skip_ch, 3)
            conv(f"unet.pyr{i + 1}", self.synth_channels[i + 1], ch, 1)
            carry = ch

        # identity-aware latent fusion MLP
        fuse_in = self.latent_dim + self.geo_dim + self.app_dim
        fuse_hidden = 192
        linear("fuse.1", fuse_in, fuse_hidden)
        linear("fuse.2", fuse_hidden, self.n_layers * self.style_dim)

        # synthesis stack
        out.append(("synth.const", (self.synth_channels[0],
                                    self.synth_resolutions[0],
                                    self.synth_resolutions[0]), "normal"))
        in_ch = self.synth_channels[0]
        for k, out_ch in enumerate(self.synth_channels):
            linear(f"synth.layer{k}.affine", self.style_dim, in_ch, bias_init="ones")
            conv(f"synth.layer{k}.conv", out_ch, in_ch, 3)
            in_ch = out_ch
        return out

    def unet_skip_channels(self):
        """Skip channel counts consumed by dec1..dec5; dec_i takes the encoder
        output at its own resolution (deepest skip first)."""
        return [self.unet_enc[len(self.unet_enc) - 1 - i]
                for i in range(len(self.unet_dec))]


DEFAULT_ARCH = ArchitectureSpec()
