#pragma once

#include <vector>

#include "volcomp/nn/tape.hpp"
#include "volcomp/volume.hpp"

// Differentiable ops over Tape. Feature maps are {C, nx, ny, nz}; vectors {n};
// matrices {rows, cols}. All ops are instantiated for float and double.
namespace volcomp::nn {

// "Same" 3D convolution, stride 1, odd cubic kernel. w: {cout, cin, k, k, k}, b: {cout}.
template <class T>
Var conv3d(Tape<T>& tape, Var x, Var w, Var b);

// Transposed 3D convolution. w: {cin, cout, k, k, k}, b: {cout}.
// Output extent per axis: (n - 1) * stride - 2 * pad + k.
template <class T>
Var conv_transpose3d(Tape<T>& tape, Var x, Var w, Var b, int stride, int pad);

// 2x2x2 mean pooling; spatial dims must be even.
template <class T>
Var avg_pool2(Tape<T>& tape, Var x);

template <class T>
Var group_norm(Tape<T>& tape, Var x, Var gamma, Var beta, int groups, double eps = 1e-5);

template <class T>
Var silu(Tape<T>& tape, Var x);

template <class T>
Var add(Tape<T>& tape, Var a, Var b);

// x: {C, ...}, v: {C}; adds v[c] to every element of channel c.
template <class T>
Var add_channel_bias(Tape<T>& tape, Var x, Var v);

template <class T>
Var concat_channels(Tape<T>& tape, const std::vector<Var>& xs);

// Symmetric center crop / zero pad of the spatial extent (same placement
// rule as volcomp::crop_pad_to).
template <class T>
Var crop_pad(Tape<T>& tape, Var x, Dims3 target);

// x: {in}, w: {out, in}, b: {out}.
template <class T>
Var linear(Tape<T>& tape, Var x, Var w, Var b);

// op(a) * op(b) with optional transposes of the 2D operands.
template <class T>
Var matmul(Tape<T>& tape, Var a, Var b, bool transpose_a = false, bool transpose_b = false);

template <class T>
Var softmax_rows(Tape<T>& tape, Var x);

template <class T>
Var scale(Tape<T>& tape, Var x, double s);

template <class T>
Var reshape(Tape<T>& tape, Var x, std::vector<int> shape);

template <class T>
Var transpose(Tape<T>& tape, Var x);

// Mean squared difference; returns a {1} tensor.
template <class T>
Var mse(Tape<T>& tape, Var a, Var b);

}  // namespace volcomp::nn
