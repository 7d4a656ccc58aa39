"""Model architecture hyperparameters."""

from ..errors import ConfigError

ARCHITECTURES = ("encoder_decoder", "encoder_only")
ACTIVATIONS = ("relu", "gelu")
POSITIONAL = ("learned", "sinusoidal", "none")
INITS = ("kaiming_uniform", "xavier")


class ModelConfig:
    """Architecture knobs for the sequence-to-sequence transformer.

    loop_idx selects layer sharing: -1 none, -2 the whole stack is
    iterated `loops` times, >= 0 that single layer is applied `loops`
    times in place.  Feed-forward blocks always use a hidden width of
    4 x emb_dim; n_*_hidden_layers adds extra 4d -> 4d hidden layers.
    """

    def __init__(self, architecture="encoder_decoder",
                 n_enc_layers=2, n_dec_layers=2,
                 enc_emb_dim=256, dec_emb_dim=256,
                 n_enc_heads=8, n_dec_heads=8,
                 n_enc_hidden_layers=1, n_dec_hidden_layers=1,
                 activation="relu", dropout=0.0, attention_dropout=0.0,
                 enc_positional="learned", dec_positional="learned",
                 share_inout_emb=True,
                 enc_loop_idx=-1, dec_loop_idx=-1,
                 enc_loops=1, dec_loops=1,
                 init="kaiming_uniform", max_positions=512,
                 dtype="float64"):
        self.architecture = architecture
        self.n_enc_layers = n_enc_layers
        self.n_dec_layers = n_dec_layers
        self.enc_emb_dim = enc_emb_dim
        self.dec_emb_dim = dec_emb_dim
        self.n_enc_heads = n_enc_heads
        self.n_dec_heads = n_dec_heads
        self.n_enc_hidden_layers = n_enc_hidden_layers
        self.n_dec_hidden_layers = n_dec_hidden_layers
        self.activation = activation
        self.dropout = dropout
        self.attention_dropout = attention_dropout
        self.enc_positional = enc_positional
        self.dec_positional = dec_positional
        self.share_inout_emb = share_inout_emb
        self.enc_loop_idx = enc_loop_idx
        self.dec_loop_idx = dec_loop_idx
        self.enc_loops = enc_loops
        self.dec_loops = dec_loops
        self.init = init
        self.max_positions = max_positions
        self.dtype = dtype
        self.validate()

    def validate(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError("unknown architecture %r" % (self.architecture,))
        if self.activation not in ACTIVATIONS:
            raise ConfigError("unknown activation %r" % (self.activation,))
        if self.init not in INITS:
            raise ConfigError("unknown init %r" % (self.init,))
        if self.enc_positional not in POSITIONAL:
            raise ConfigError("unknown positional %r" % (self.enc_positional,))
        if self.dec_positional not in POSITIONAL:
            raise ConfigError("unknown positional %r" % (self.dec_positional,))
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")
        if self.n_enc_layers < 1:
            raise ConfigError("n_enc_layers must be >= 1")
        if self.enc_emb_dim % self.n_enc_heads != 0:
            raise ConfigError("enc_emb_dim must be divisible by n_enc_heads")
        if self.n_enc_hidden_layers < 1 or self.n_dec_hidden_layers < 1:
            raise ConfigError("hidden layer counts must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if not 0.0 <= self.attention_dropout < 1.0:
            raise ConfigError("attention_dropout must be in [0, 1)")
        if self.max_positions < 1:
            raise ConfigError("max_positions must be >= 1")
        self._validate_loop("enc", self.enc_loop_idx, self.enc_loops,
                            self.n_enc_layers)
        if self.architecture == "encoder_decoder":
            if self.n_dec_layers < 1:
                raise ConfigError("n_dec_layers must be >= 1")
            if self.dec_emb_dim % self.n_dec_heads != 0:
                raise ConfigError("dec_emb_dim must be divisible by n_dec_heads")
            self._validate_loop("dec", self.dec_loop_idx, self.dec_loops,
                                self.n_dec_layers)

    @staticmethod
    def _validate_loop(side, loop_idx, loops, n_layers):
        if loop_idx < -2:
            raise ConfigError("%s_loop_idx must be >= -2" % side)
        if loop_idx >= n_layers:
            raise ConfigError("%s_loop_idx must be < n_%s_layers" % (side, side))
        if loop_idx != -1 and loops < 1:
            raise ConfigError("%s_loops must be >= 1 when layers are shared"
                              % side)

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)
