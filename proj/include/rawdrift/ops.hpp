#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "rawdrift/tape.hpp"

namespace rawdrift::ops {

enum class Padding { Zero, Reflect };

// Elementwise. Binary ops require equal shapes; scalar operands are
// single-element variables.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_scalar(Var a, double s);
Var scale(Var a, double s);
Var mul_scalar(Var a, Var s);
Var pow(Var a, double exponent);
/// a^p with a trainable scalar exponent. d/dp uses log(max(a, 1e-12)) and is
/// zero where a == 0.
Var pow(Var a, Var exponent);
Var reciprocal(Var a);
/// Clip to [0, 1]. Subgradient 1 on the closed interval, 0 outside.
Var clip01(Var a);
Var relu(Var a);

enum class Elementwise { Add, Sub, Mul, Pow, Clip01, Scale };
/// Dispatcher over the elementwise family; `operand` is ignored for Clip01.
Var elementwise(Var a, Elementwise op, Var operand);
Var elementwise(Var a, Elementwise op, double operand);

// Reductions to a scalar.
Var sum(Var a);
Var mean(Var a);
Var sq_l2(Var a);

enum class Reduce { Sum, Mean, SqL2 };
Var reduce(Var a, Reduce op);

/// Same-size 2-D cross-correlation of every channel plane of a C×H×W or
/// N×C×H×W input. With `per_channel` the kernel is a single k×k array
/// shared by all channels; otherwise it is C×k×k, one kernel per channel.
Var conv2d(Var input, Var kernel, Padding padding, bool per_channel);

/// Per-pixel 3×3 matrix applied across the channel axis of (N×)3×H×W.
Var channel_affine(Var input, Var matrix);
/// Channel c multiplied by gains[c].
Var channel_scale(Var input, Var gains);

/// Maps a (N×)H×W mosaic to (N×)3×H×W sparse planes: the pixel at
/// (row parity r, col parity c) goes to channel site_channel[2r + c], the
/// other two channels are zero there.
Var bayer_split(Var raw, std::array<int, 4> site_channel);
/// Subtracts offsets[site_slot[2r + c]] from every pixel with parity (r, c).
Var site_subtract(Var raw, Var offsets, std::array<int, 4> site_slot);

/// (x - channel mean) / (channel std + eps) with statistics over batch and
/// spatial axes of N×C×H×W. Population std.
Var channel_standardize(Var input, double eps);

// Layers for the task models.
/// N×Cin×H×W with weight Cout×Cin×k×k and bias Cout, zero padding, stride 1.
Var conv2d_dense(Var input, Var weight, Var bias);
Var max_pool2(Var input);
/// N×C×H×W -> N×C.
Var global_avg_pool(Var input);
/// N×F with weight K×F and bias K -> N×K.
Var linear(Var input, Var weight, Var bias);
/// Nearest-neighbour ×2.
Var upsample2(Var input);
Var concat_channels(Var a, Var b);
/// Same values under a new shape with equal element count.
Var reshape(Var input, Shape shape);

// Fused losses (mean over the batch).
/// logits N×K, labels in [0, K).
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
/// Binary cross entropy on logits plus (1 - soft Dice) over the whole batch.
/// logits and mask have N×H×W elements in any matching layout.
Var bce_dice(Var logits, const Tensor& mask, double smooth = 1.0);

}  // namespace rawdrift::ops
