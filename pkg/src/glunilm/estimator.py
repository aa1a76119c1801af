"""scikit-learn compatible wrapper around the windowing, network and training pieces."""
import logging

from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .data import AGGREGATE_DIVISOR, ApplianceSpec, get_appliance, normalize, rebalance_on_state
from .exceptions import DataError
from .network import Checkpoint, NetworkConfig, build_network
from .training import TrainConfig, train
from .validation import check_segments, is_segment_list
from .windowing import disaggregate, make_windows

logger = logging.getLogger(__name__)


class Seq2SeqDisaggregator(RegressorMixin, BaseEstimator):
    """Estimate one appliance's power trace from an aggregate power trace.

    ``fit(X, y)`` takes the aggregate ``X`` and appliance trace ``y`` in watts,
    either as single 1-D series or as lists of equally segmented series (for
    data split at outages). ``predict(X)`` returns the disaggregated trace in
    watts with the same length as ``X``.

    Parameters
    ----------
    appliance : str
        Appliance name; selects default divisor and on-threshold.
    appliance_divisor, on_threshold : float or None
        Override the appliance defaults (watts).
    aggregate_divisor : float
        Scaling applied to the aggregate before it enters the network.
    l_out, n_glu_stages, conv_channels, kernel_size, n_res_blocks, res_hidden : int
        Network shape; the input window is ``l_out * 2**n_glu_stages`` samples.
    step : int
        Stride between windows at prediction time. Must divide ``l_out``.
    train_step : int or None
        Stride between training windows (defaults to ``step``).
    rebalance_p_target : float or None
        If set, off-state training windows are randomly dropped so on-state
        windows make up this expected share.
    random_state : int
        Seeds initialization, shuffling and rebalancing.
    """

    def __init__(
        self,
        appliance="fridge",
        appliance_divisor=None,
        on_threshold=None,
        aggregate_divisor=AGGREGATE_DIVISOR,
        l_out=100,
        n_glu_stages=3,
        conv_channels=100,
        kernel_size=4,
        n_res_blocks=2,
        res_hidden=50,
        step=5,
        train_step=None,
        batch_size=32,
        learning_rate=1e-3,
        beta1=0.9,
        beta2=0.999,
        epsilon=1e-8,
        epochs=10,
        max_steps=None,
        validation_fraction=0.1,
        rebalance_p_target=None,
        random_state=0,
    ):
        self.appliance = appliance
        self.appliance_divisor = appliance_divisor
        self.on_threshold = on_threshold
        self.aggregate_divisor = aggregate_divisor
        self.l_out = l_out
        self.n_glu_stages = n_glu_stages
        self.conv_channels = conv_channels
        self.kernel_size = kernel_size
        self.n_res_blocks = n_res_blocks
        self.res_hidden = res_hidden
        self.step = step
        self.train_step = train_step
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.epochs = epochs
        self.max_steps = max_steps
        self.validation_fraction = validation_fraction
        self.rebalance_p_target = rebalance_p_target
        self.random_state = random_state

    def appliance_spec(self):
        try:
            base = get_appliance(self.appliance)
        except DataError:
            if self.appliance_divisor is None or self.on_threshold is None:
                raise
            base = ApplianceSpec(self.appliance, self.appliance_divisor, self.on_threshold)
        return ApplianceSpec(
            self.appliance,
            base.divisor if self.appliance_divisor is None else float(self.appliance_divisor),
            base.on_threshold if self.on_threshold is None else float(self.on_threshold),
        )

    def network_config(self):
        return NetworkConfig(
            l_in=self.l_out * 2 ** self.n_glu_stages,
            l_out=self.l_out,
            n_glu_stages=self.n_glu_stages,
            conv_channels=self.conv_channels,
            kernel_size=self.kernel_size,
            n_res_blocks=self.n_res_blocks,
            res_hidden=self.res_hidden,
            rng_seed=self.random_state,
        )

    def train_config(self):
        return TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            epochs=self.epochs,
            seed=self.random_state,
            validation_fraction=self.validation_fraction,
            max_steps=self.max_steps,
        )

    def make_pairs(self, X, y):
        """Normalized training window pairs for every segment, in time order."""
        config = self.network_config()
        spec = self.appliance_spec()
        xs, ys = check_segments(X, y, min_length=config.l_out)
        stride = self.step if self.train_step is None else self.train_step
        pairs = []
        for agg, target in zip(xs, ys):
            pairs += make_windows(
                normalize(agg, self.aggregate_divisor),
                normalize(target, spec.divisor),
                config.l_in,
                config.l_out,
                stride,
            )
        if self.rebalance_p_target is not None:
            n_before = len(pairs)
            pairs = rebalance_on_state(pairs, self.rebalance_p_target, spec, seed=self.random_state)
            logger.info("rebalanced %d -> %d windows", n_before, len(pairs))
        return pairs

    def fit(self, X, y):
        pairs = self.make_pairs(X, y)
        net = build_network(self.network_config())
        result = train(net, pairs, self.train_config())
        self.network_ = result.network
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.n_steps_ = result.steps
        self.n_train_windows_ = len(pairs)
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        spec = self.appliance_spec()
        xs, _ = check_segments(X, min_length=self.network_.config.l_out)
        preds = [
            disaggregate(self.network_, agg, self.aggregate_divisor, spec.divisor, self.step)
            for agg in xs
        ]
        return preds if is_segment_list(X) else preds[0]

    def to_checkpoint(self):
        check_is_fitted(self, "network_")
        return Checkpoint(
            self.network_,
            appliance=self.appliance,
            aggregate_divisor=self.aggregate_divisor,
            appliance_divisor=self.appliance_spec().divisor,
        )

    @classmethod
    def from_checkpoint(cls, checkpoint, **params):
        """Rebuild a fitted estimator; divisors come from the checkpoint."""
        cfg = checkpoint.network.config
        est = cls(
            appliance=checkpoint.appliance,
            appliance_divisor=checkpoint.appliance_divisor,
            aggregate_divisor=checkpoint.aggregate_divisor,
            l_out=cfg.l_out,
            n_glu_stages=cfg.n_glu_stages,
            conv_channels=cfg.conv_channels,
            kernel_size=cfg.kernel_size,
            n_res_blocks=cfg.n_res_blocks,
            res_hidden=cfg.res_hidden,
            random_state=cfg.rng_seed,
            **params,
        )
        if est.on_threshold is None:
            try:
                get_appliance(checkpoint.appliance)
            except DataError:
                est.on_threshold = 0.0
        est.network_ = checkpoint.network
        return est
