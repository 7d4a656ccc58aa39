"""Command-line entry point: train / datagen / logparse subcommands.

Flag spellings follow the conventions of the original integer-sequence
training tool (double dash, underscores, value-style booleans), so
published command lines run unchanged apart from the program name.
Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

import argparse
import glob
import os
import random
import string
import sys

from .data import ChunkedFileStream, FileStream, GeneratedStream, \
    SamplerConfig, read_examples, write_example
from .datagen import run_pipeline
from .errors import ArithseqError, ConfigError, FileError
from .evaluator import Evaluator
from .generators import OPERATIONS, TaskSpec, make_task
from .logparse import build_table, default_warn, parse_many, render_curve, \
    write_steps_table, write_table
from .model import ModelConfig, TransformerModel
from .optim import parse_optimizer
from .rng import RngStream
from .trainer import RunLogger, Trainer, parse_validation_metrics, \
    write_params_file
from .vocab import build_vocabulary


def bool_flag(value):
    """Parse value-style booleans: true/false, 1/0, yes/no."""
    lowered = value.lower()
    if lowered in ("true", "1", "yes", "y"):
        return True
    if lowered in ("false", "0", "no", "n"):
        return False
    raise argparse.ArgumentTypeError("invalid boolean value %r" % value)


class ArgumentParser(argparse.ArgumentParser):
    """argparse variant that raises instead of calling sys.exit(2)."""

    def error(self, message):
        raise ConfigError(message)


def _add_task_args(p):
    g = p.add_argument_group("task")
    g.add_argument("--operation", required=True, choices=OPERATIONS,
                   help="problem family, or 'data' for file-based training")
    g.add_argument("--base", type=int, default=1000,
                   help="numeration base for positional integer encoding")
    g.add_argument("--minint", type=int, default=1)
    g.add_argument("--maxint", type=int, default=1000000)
    g.add_argument("--modulo", "--modulus", dest="modulo", type=int,
                   default=67)
    g.add_argument("--dim1", type=int, default=4)
    g.add_argument("--dim2", type=int, default=4)
    g.add_argument("--max_class", type=int, default=100)
    g.add_argument("--n_eval_metrics", type=int, default=0)
    g.add_argument("--n_error_metrics", type=int, default=0)


def _add_data_args(p):
    g = p.add_argument_group("data")
    g.add_argument("--train_data", type=str, default="")
    g.add_argument("--eval_data", type=str, default="",
                   help="comma-separated evaluation files "
                        "(prefixes valid, test, test2, ...)")
    g.add_argument("--reload_data_size", type=int, default=-1,
                   help="cap on in-memory training examples (-1: all)")
    g.add_argument("--eval_data_size", type=int, default=-1,
                   help="cap on examples per evaluation file (-1: all)")
    g.add_argument("--batch_load", type=bool_flag, default=False,
                   help="stream the training file in chunks of reload_size")
    g.add_argument("--reload_size", type=int, default=100000)
    g.add_argument("--two_classes", type=bool_flag, default=False)
    g.add_argument("--first_class_size", type=int, default=0)
    g.add_argument("--first_class_prob", type=float, default=0.5)
    g.add_argument("--max_len", type=int, default=-1,
                   help="skip examples with more tokens than this (-1: off)")
    g.add_argument("--num_workers", type=int, default=1)


def _add_model_args(p):
    g = p.add_argument_group("model")
    g.add_argument("--architecture", type=str, default="encoder_decoder",
                   choices=("encoder_decoder", "encoder_only"))
    g.add_argument("--n_enc_layers", type=int, default=2)
    g.add_argument("--n_dec_layers", type=int, default=2)
    g.add_argument("--enc_emb_dim", type=int, default=256)
    g.add_argument("--dec_emb_dim", type=int, default=256)
    g.add_argument("--n_enc_heads", type=int, default=8)
    g.add_argument("--n_dec_heads", type=int, default=8)
    g.add_argument("--n_enc_hidden_layer", "--n_enc_hidden_layers",
                   dest="n_enc_hidden_layers", type=int, default=1)
    g.add_argument("--n_dec_hidden_layer", "--n_dec_hidden_layers",
                   dest="n_dec_hidden_layers", type=int, default=1)
    g.add_argument("--gelu_activation", type=bool_flag, default=False)
    g.add_argument("--dropout", type=float, default=0.0)
    g.add_argument("--attention_dropout", type=float, default=0.0)
    g.add_argument("--sinusoidal_embeddings", type=bool_flag, default=False)
    g.add_argument("--enc_has_pos_emb", type=bool_flag, default=True)
    g.add_argument("--dec_has_pos_emb", type=bool_flag, default=True)
    g.add_argument("--share_inout_emb", type=bool_flag, default=True)
    g.add_argument("--xav_init", type=bool_flag, default=False)
    g.add_argument("--enc_loop_idx", type=int, default=-1)
    g.add_argument("--dec_loop_idx", type=int, default=-1)
    g.add_argument("--enc_loops", type=int, default=1)
    g.add_argument("--dec_loops", type=int, default=1)
    g.add_argument("--max_positions", type=int, default=512)


def _add_trainer_args(p):
    g = p.add_argument_group("training")
    g.add_argument("--dump_path", type=str, default="dumped")
    g.add_argument("--exp_name", type=str, default="debug")
    g.add_argument("--exp_id", type=str, default="",
                   help="experiment id (random 10 characters when absent)")
    g.add_argument("--reload_checkpoint", type=str, default="")
    g.add_argument("--reload_model", type=str, default="",
                   help="load parameters only from this checkpoint")
    g.add_argument("--save_periodic", type=int, default=0)
    g.add_argument("--validation_metrics", type=str, default="",
                   help="metrics to track for best-model saves; prefix "
                        "with _ for lower-is-better")
    g.add_argument("--stopping_criterion", type=str, default="",
                   help="'metric,patience' early-stopping rule")
    g.add_argument("--max_epoch", "--max_epochs", dest="max_epoch",
                   type=int, default=100000)
    g.add_argument("--epoch_size", type=int, default=300000)
    g.add_argument("--batch_size", type=int, default=32)
    g.add_argument("--optimizer", type=str, default="adam,lr=1e-4")
    g.add_argument("--clip_grad_norm", type=float, default=5.0)
    g.add_argument("--accumulate_gradients", type=int, default=1)
    g.add_argument("--report_loss_every", type=int, default=200)
    g.add_argument("--env_base_seed", "--base_env_seed",
                   dest="env_base_seed", type=int, default=-1,
                   help="generator seed; negative draws one from entropy")
    g.add_argument("--deterministic", type=bool_flag, default=False,
                   help="single worker, per-example serial gradient "
                        "reduction; requires env_base_seed >= 0")
    g.add_argument("--export_data", type=bool_flag, default=False,
                   help="write generated examples to data.prefix instead "
                        "of training")


def _add_eval_args(p):
    g = p.add_argument_group("evaluation")
    g.add_argument("--eval_size", type=int, default=10000)
    g.add_argument("--batch_size_eval", type=int, default=128)
    g.add_argument("--beam_search", type=bool_flag, default=False)
    g.add_argument("--beam_size", type=int, default=1)
    g.add_argument("--max_output_len", type=int, default=128)
    g.add_argument("--eval_verbose", type=int, default=0, choices=(0, 1, 2))
    g.add_argument("--eval_verbose_print", type=bool_flag, default=False)
    g.add_argument("--export_pred", type=bool_flag, default=False)
    g.add_argument("--eval_only", type=bool_flag, default=False)
    g.add_argument("--eval_from_exp", type=str, default="",
                   help="evaluate the best (or last) checkpoint of this "
                        "experiment directory")


def _add_compat_args(p):
    g = p.add_argument_group("compatibility (accepted, no effect)")
    g.add_argument("--cpu", type=bool_flag, default=True)
    g.add_argument("--local_gpu", type=int, default=-1)
    g.add_argument("--local_rank", type=int, default=-1)
    g.add_argument("--fp16", type=bool_flag, default=False)
    g.add_argument("--amp", type=int, default=-1)


def build_parser():
    parser = ArgumentParser(prog="arithseq", allow_abbrev=False,
                            description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", allow_abbrev=False,
                           help="train (or evaluate) a model")
    _add_task_args(train)
    _add_data_args(train)
    _add_model_args(train)
    _add_trainer_args(train)
    _add_eval_args(train)
    _add_compat_args(train)

    datagen = sub.add_parser("datagen", allow_abbrev=False,
                             help="generate a corpus and split it")
    _add_task_args(datagen)
    g = datagen.add_argument_group("pipeline")
    g.add_argument("--count", type=int, required=True,
                   help="lines to generate before dedupe")
    g.add_argument("--valid_size", type=int, default=10000)
    g.add_argument("--test_size", type=int, default=10000)
    g.add_argument("--dedupe", type=bool_flag, default=True)
    g.add_argument("--max_len", type=int, default=-1)
    g.add_argument("--num_workers", type=int, default=1)
    g.add_argument("--dump_path", type=str, default="dumped")
    g.add_argument("--exp_name", type=str, default="datagen")
    g.add_argument("--exp_id", type=str, default="")
    g.add_argument("--env_base_seed", "--base_env_seed",
                   dest="env_base_seed", type=int, default=-1)

    logparse = sub.add_parser("logparse", allow_abbrev=False,
                              help="turn train.log files into metric tables")
    logparse.add_argument("logs", nargs="+",
                          help="train.log files or experiment directories")
    logparse.add_argument("--output", type=str, default="-",
                          help="CSV output path ('-' for stdout)")
    logparse.add_argument("--steps_output", type=str, default="",
                          help="optional CSV path for step-loss lines")
    logparse.add_argument("--plot", type=str, default="",
                          help="write a text learning curve here "
                               "('-' for stdout)")
    logparse.add_argument("--plot_metric", type=str,
                          default="valid_arithmetic_acc")
    return parser


def _random_exp_id():
    chars = string.ascii_lowercase + string.digits
    return "".join(random.SystemRandom().choice(chars) for _ in range(10))


def resolve_dump_dir(args):
    """dump_path/exp_name/exp_id, creating directories as needed."""
    if not args.exp_id:
        args.exp_id = _random_exp_id()
    path = os.path.join(args.dump_path, args.exp_name, args.exp_id)
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise FileError("cannot create experiment directory %s: %s"
                        % (path, e))
    return path


def make_task_spec(args):
    return TaskSpec(operation=args.operation, min_int=args.minint,
                    max_int=args.maxint, modulo=args.modulo, base=args.base,
                    dim1=args.dim1, dim2=args.dim2, max_class=args.max_class,
                    n_eval_metrics=args.n_eval_metrics,
                    n_error_metrics=args.n_error_metrics)


def make_model_config(args):
    def positional(has_pos_emb):
        if not has_pos_emb:
            return "none"
        return "sinusoidal" if args.sinusoidal_embeddings else "learned"

    return ModelConfig(
        architecture=args.architecture,
        n_enc_layers=args.n_enc_layers, n_dec_layers=args.n_dec_layers,
        enc_emb_dim=args.enc_emb_dim, dec_emb_dim=args.dec_emb_dim,
        n_enc_heads=args.n_enc_heads, n_dec_heads=args.n_dec_heads,
        n_enc_hidden_layers=args.n_enc_hidden_layers,
        n_dec_hidden_layers=args.n_dec_hidden_layers,
        activation="gelu" if args.gelu_activation else "relu",
        dropout=args.dropout, attention_dropout=args.attention_dropout,
        enc_positional=positional(args.enc_has_pos_emb),
        dec_positional=positional(args.dec_has_pos_emb),
        share_inout_emb=args.share_inout_emb,
        enc_loop_idx=args.enc_loop_idx, dec_loop_idx=args.dec_loop_idx,
        enc_loops=args.enc_loops, dec_loops=args.dec_loops,
        init="xavier" if args.xav_init else "kaiming_uniform",
        max_positions=args.max_positions)


def _validate_train_args(args):
    if args.deterministic:
        if args.num_workers != 1:
            raise ConfigError("deterministic mode requires --num_workers 1")
        if args.env_base_seed < 0:
            raise ConfigError("deterministic mode requires a nonnegative "
                              "--env_base_seed")
    if args.operation == "data":
        if args.export_data:
            raise ConfigError("--export_data cannot be combined with "
                              "--operation data")
        if not args.train_data and not (args.eval_only or args.eval_from_exp):
            raise ConfigError("--operation data requires --train_data")
        if not args.eval_data:
            raise ConfigError("--operation data requires --eval_data")
    if args.batch_load and not args.train_data:
        raise ConfigError("--batch_load requires --train_data")
    if args.beam_size < 1:
        raise ConfigError("--beam_size must be >= 1")


def _log_startup(logger, args, vocabulary):
    for key, value in sorted(vars(args).items()):
        logger.log("%s: %s" % (key, value))
    if args.fp16 or args.amp >= 0 or args.local_gpu >= 0 \
            or args.local_rank >= 0:
        logger.log("note: --fp16/--amp/--local_gpu/--local_rank are "
                   "accepted for compatibility but have no effect "
                   "(host-only, double-precision execution)")
    logger.log("vocabulary: %d tokens: %s"
               % (len(vocabulary.tokens), " ".join(vocabulary.tokens)))


def _export_data_loop(args, task, logger, dump_dir):
    """Pure generation mode: write data.prefix, no model, no training."""
    stream = GeneratedStream(task, args.env_base_seed,
                             num_workers=args.num_workers, tag=0,
                             split="train", max_len=args.max_len)
    path = os.path.join(dump_dir, "data.prefix")
    written = 0
    try:
        with open(path, "w", encoding="utf-8") as f:
            for epoch in range(args.max_epoch):
                for _ in range(args.epoch_size):
                    example = stream.next_example()
                    f.write(write_example(example.input, example.output))
                    written += 1
                logger.log("export epoch %d done - %d examples in %s"
                           % (epoch, written, path))
    except OSError as e:
        raise FileError("cannot write %s: %s" % (path, e))
    return 0


def _build_train_stream(args, task):
    if args.train_data:
        if args.batch_load:
            return ChunkedFileStream(args.train_data, args.reload_size,
                                     max_len=args.max_len)
        example_set = read_examples(args.train_data,
                                    limit=args.reload_data_size,
                                    max_len=args.max_len)
        sampler = SamplerConfig(
            mode="two_class" if args.two_classes else "uniform",
            first_class_size=args.first_class_size,
            first_class_prob=args.first_class_prob)
        sampler.validate(len(example_set))
        return FileStream(example_set, sampler,
                          RngStream(args.env_base_seed, tag=4))
    return GeneratedStream(task, args.env_base_seed,
                           num_workers=args.num_workers, tag=0,
                           split="train", max_len=args.max_len)


def _probe_encoder_only(args, task):
    """Encoder-only models need outputs no longer than inputs; sample a
    few generated examples up front to reject impossible tasks early."""
    if args.architecture != "encoder_only" or args.operation == "data":
        return
    stream = GeneratedStream(task, args.env_base_seed, tag=7,
                             split="train", max_len=args.max_len)
    for _ in range(64):
        example = stream.next_example()
        if len(example.output) + 1 > len(example.input):
            raise ConfigError(
                "encoder_only requires outputs shorter than inputs; "
                "this task produced output %r for input %r"
                % (" ".join(example.output), " ".join(example.input)))


def _resolve_eval_from_exp(exp_dir, args):
    """Best-metric checkpoint if present, else the last checkpoint."""
    candidates = []
    if args.validation_metrics:
        for name, _ in parse_validation_metrics(args.validation_metrics):
            candidates.append(os.path.join(exp_dir, "best-%s" % name))
    candidates.extend(sorted(glob.glob(os.path.join(exp_dir, "best-*"))))
    candidates.append(os.path.join(exp_dir, "checkpoint"))
    for path in candidates:
        if os.path.isfile(path):
            return path
    raise FileError("no checkpoint found under %s" % exp_dir)


def cmd_train(args):
    _validate_train_args(args)
    dump_dir = resolve_dump_dir(args)
    logger = RunLogger(os.path.join(dump_dir, "train.log"), echo=True)
    try:
        task = make_task(make_task_spec(args))
        vocabulary = build_vocabulary(task.input_spec(), task.output_spec(),
                                      args.base)
        write_params_file(os.path.join(dump_dir, "params.txt"), args)
        _log_startup(logger, args, vocabulary)
        if args.export_data:
            return _export_data_loop(args, task, logger, dump_dir)
        _probe_encoder_only(args, task)
        model_rng = RngStream(args.env_base_seed, tag=2)
        model = TransformerModel(make_model_config(args),
                                 len(vocabulary.tokens), model_rng)
        logger.log("model has %d trainable parameters"
                   % model.parameter_count())
        evaluator = Evaluator(
            task, vocabulary, logger, eval_data=args.eval_data,
            eval_size=args.eval_size, eval_data_size=args.eval_data_size,
            batch_size_eval=args.batch_size_eval,
            max_output_len=args.max_output_len,
            beam_search_on=args.beam_search, beam_size=args.beam_size,
            eval_verbose=args.eval_verbose,
            eval_verbose_print=args.eval_verbose_print,
            export_pred=args.export_pred, max_class=args.max_class,
            base_seed=args.env_base_seed, max_len=args.max_len)
        train_stream = None
        if not (args.eval_only or args.eval_from_exp):
            train_stream = _build_train_stream(args, task)
        trainer = Trainer(model, vocabulary, train_stream,
                          parse_optimizer(args.optimizer), args, logger,
                          evaluator=evaluator, dump_dir=dump_dir,
                          dropout_rng=RngStream(args.env_base_seed, tag=3))
        if args.eval_from_exp:
            path = _resolve_eval_from_exp(args.eval_from_exp, args)
            logger.log("evaluating checkpoint %s" % path)
            trainer.load(path, reload_model_only=True)
            metrics = evaluator.run(model, epoch=trainer.epoch,
                                    export_dir=dump_dir)
            trainer.log_metrics(metrics)
            return 0
        if args.reload_model:
            trainer.load(args.reload_model, reload_model_only=True)
            logger.log("loaded model parameters from %s" % args.reload_model)
        if args.reload_checkpoint:
            trainer.load(args.reload_checkpoint)
            logger.log("resumed from %s (epoch %d, step %d)"
                       % (args.reload_checkpoint, trainer.epoch,
                          trainer.step))
        else:
            auto = os.path.join(dump_dir, "checkpoint")
            if os.path.isfile(auto):
                trainer.load(auto)
                logger.log("resumed from %s (epoch %d, step %d)"
                           % (auto, trainer.epoch, trainer.step))
        if args.eval_only:
            metrics = evaluator.run(model, epoch=trainer.epoch,
                                    export_dir=dump_dir)
            trainer.log_metrics(metrics)
            return 0
        trainer.train()
        return 0
    finally:
        logger.close()


def cmd_datagen(args):
    task = make_task(make_task_spec(args))
    out_dir = resolve_dump_dir(args)
    logger = RunLogger(os.path.join(out_dir, "datagen.log"), echo=True)
    try:
        summary = run_pipeline(task, out_dir, args.count, args.env_base_seed,
                               num_workers=args.num_workers,
                               valid_size=args.valid_size,
                               test_size=args.test_size, dedupe=args.dedupe,
                               max_len=args.max_len, logger=logger)
        logger.log("corpus ready: %s" % summary["train"])
        return 0
    finally:
        logger.close()


def cmd_logparse(args):
    parsed = parse_many(args.logs, warn=default_warn)
    header, rows = build_table(parsed)
    if args.output == "-":
        write_table(header, rows, sys.stdout)
    else:
        with open(args.output, "w", encoding="utf-8") as f:
            write_table(header, rows, f)
    if args.steps_output:
        with open(args.steps_output, "w", encoding="utf-8") as f:
            write_steps_table(parsed, f)
    if args.plot:
        curve = render_curve(parsed, args.plot_metric)
        if args.plot == "-":
            sys.stdout.write(curve)
        else:
            with open(args.plot, "w", encoding="utf-8") as f:
                f.write(curve)
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "datagen":
            return cmd_datagen(args)
        return cmd_logparse(args)
    except ConfigError as e:
        print("configuration error: %s" % e, file=sys.stderr)
        return 1
    except ArithseqError as e:
        print("error: %s" % e, file=sys.stderr)
        return 2
    except OSError as e:
        print("error: %s" % e, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
