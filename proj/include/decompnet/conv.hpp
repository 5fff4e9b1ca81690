#pragma once

#include <cstddef>

#include "decompnet/matrix.hpp"

namespace decompnet {

// Shape of a 4-way convolution kernel. All fields >= 1.
struct ConvKernelShape {
    std::size_t k_h = 1;
    std::size_t k_w = 1;
    std::size_t c_in = 1;
    std::size_t c_out = 1;
    std::size_t stride = 1;

    void validate() const;
    bool is_1x1() const { return k_h == 1 && k_w == 1; }
    friend bool operator==(const ConvKernelShape&, const ConvKernelShape&) = default;
};

// 4-way kernel tensor stored row-major in [k_h][k_w][c_in][c_out] order.
struct ConvKernel {
    ConvKernelShape shape;
    std::vector<double> data;

    double& at(std::size_t kh, std::size_t kw, std::size_t ci, std::size_t co) {
        return data[((kh * shape.k_w + kw) * shape.c_in + ci) * shape.c_out + co];
    }
    double at(std::size_t kh, std::size_t kw, std::size_t ci, std::size_t co) const {
        return data[((kh * shape.k_w + kw) * shape.c_in + ci) * shape.c_out + co];
    }
};

// Channel-wise matricization: (k_h*k_w*c_in) x c_out, with
// row = (kh*k_w + kw)*c_in + ci and col = co. This is the identity reshaping
// of the [k_h][k_w][c_in][c_out] tensor, so the entries keep their order.
DenseMatrix matricize_channel(const ConvKernel& kernel);
ConvKernel dematricize_channel(const DenseMatrix& m, const ConvKernelShape& shape);

// Spatial-wise matricization: (k_h*c_in) x (k_w*c_out), with
// row = kh*c_in + ci and col = kw*c_out + co. For 1x1 kernels both forms
// collapse to c_in x c_out, and the channel form is used (1x1 kernels have
// no spatial redundancy), so matricize_spatial falls back to the channel
// mapping there.
DenseMatrix matricize_spatial(const ConvKernel& kernel);
ConvKernel dematricize_spatial(const DenseMatrix& m, const ConvKernelShape& shape);

// Output spatial extent for a valid (unpadded) convolution.
std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride);

// im2col for a single sample laid out as [c][h][w]. Produces a
// (outH*outW) x (k_h*k_w*c_in) matrix whose row p is the patch for output
// pixel p = oh*outW + ow and whose columns follow the channel-matricization
// row order, so conv(x) = im2col(x) * matricize_channel(kernel).
DenseMatrix im2col(const double* sample, std::size_t h, std::size_t w,
                   const ConvKernelShape& shape);

// Adjoint of im2col: scatter patch-gradient rows back onto the input image.
void col2im_add(const DenseMatrix& cols, std::size_t h, std::size_t w,
                const ConvKernelShape& shape, double* sample_grad);

} // namespace decompnet
