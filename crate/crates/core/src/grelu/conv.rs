//! Convolution lowered to matrix products, and the masked-convolution student
//! `mix_1x1( main(z) * 1(mask(z) >= 0) )`.

use crate::data::{rng, DenseMatrix};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// NCHW image batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch<T> {
    pub n: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> ImageBatch<T> {
    pub fn new(
        n: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<T>,
    ) -> Result<Self> {
        let want = n * channels * height * width;
        if data.len() != want {
            return Err(Error::dims("image batch buffer", want, data.len()));
        }
        Ok(Self {
            n,
            channels,
            height,
            width,
            data,
        })
    }

    /// One flattened `C*H*W` image per matrix row.
    pub fn from_rows(
        x: &DenseMatrix<T>,
        channels: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if x.cols() != channels * height * width {
            return Err(Error::dims(
                "flattened image width",
                channels * height * width,
                x.cols(),
            ));
        }
        Self::new(x.rows(), channels, height, width, x.as_slice().to_vec())
    }

    pub fn to_rows(&self) -> DenseMatrix<T> {
        DenseMatrix::from_vec_unchecked(
            self.n,
            self.channels * self.height * self.width,
            self.data.clone(),
        )
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[((b * self.channels + c) * self.height + y) * self.width + x]
    }
}

/// Square-kernel convolution without bias. `weights` is
/// `out_channels x (in_channels * kernel * kernel)`, patch order `(c, ky, kx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weights: DenseMatrix<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weights: DenseMatrix<T>,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::InvalidArgument(
                "kernel and stride must be positive".into(),
            ));
        }
        let patch = in_channels * kernel * kernel;
        if weights.shape() != (out_channels, patch) {
            return Err(Error::dims(
                "conv weights",
                out_channels * patch,
                weights.rows() * weights.cols(),
            ));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights,
        })
    }

    pub fn gaussian(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        seed: u64,
    ) -> Self {
        let patch = in_channels * kernel * kernel;
        let mut r = rng::seeded(seed);
        let w = rng::normal_vec(&mut r, out_channels * patch, 1.0 / (patch as f64).sqrt());
        Self::new(
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            DenseMatrix::from_vec_unchecked(out_channels, patch, w),
        )
        .expect("consistent shapes")
    }

    pub fn output_hw(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        out_hw(height, width, self.kernel, self.stride, self.padding)
    }

    pub fn param_count(&self) -> usize {
        self.weights.rows() * self.weights.cols()
    }

    pub fn forward(&self, z: &ImageBatch<T>) -> Result<ImageBatch<T>> {
        if z.channels != self.in_channels {
            return Err(Error::dims(
                "conv input channels",
                self.in_channels,
                z.channels,
            ));
        }
        conv_forward(&self.weights, z, self.kernel, self.stride, self.padding)
    }
}

fn out_hw(
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    let ph = height + 2 * padding;
    let pw = width + 2 * padding;
    if kernel > ph || kernel > pw || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel {kernel} does not fit a padded {ph}x{pw} image"
        )));
    }
    Ok(((ph - kernel) / stride + 1, (pw - kernel) / stride + 1))
}

/// Patch matrix with one row per `(image, oy, ox)` and one column per
/// `(channel, ky, kx)`; padded positions read as zero.
pub fn im2col<T: Real>(
    z: &ImageBatch<T>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<DenseMatrix<T>> {
    let (oh, ow) = out_hw(z.height, z.width, kernel, stride, padding)?;
    let patch = z.channels * kernel * kernel;
    let mut out = DenseMatrix::zeros(z.n * oh * ow, patch);
    for b in 0..z.n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = out.row_mut((b * oh + oy) * ow + ox);
                let mut col = 0;
                for c in 0..z.channels {
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let y = (oy * stride + ky) as isize - padding as isize;
                            let x = (ox * stride + kx) as isize - padding as isize;
                            if y >= 0 && x >= 0 && (y as usize) < z.height && (x as usize) < z.width
                            {
                                row[col] = z.at(b, c, y as usize, x as usize);
                            }
                            col += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Convolution as `im2col(z) * filters^T`, reshaped back to NCHW.
pub fn conv_forward<T: Real>(
    filters: &DenseMatrix<T>,
    z: &ImageBatch<T>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<ImageBatch<T>> {
    let patches = im2col(z, kernel, stride, padding)?;
    if filters.cols() != patches.cols() {
        return Err(Error::dims(
            "filter patch size",
            patches.cols(),
            filters.cols(),
        ));
    }
    let (oh, ow) = out_hw(z.height, z.width, kernel, stride, padding)?;
    let prod = patches.matmul(&filters.transpose())?;
    let oc = filters.rows();
    let mut data = vec![T::zero(); z.n * oc * oh * ow];
    for b in 0..z.n {
        for p in 0..oh * ow {
            let r = prod.row(b * oh * ow + p);
            for (c, v) in r.iter().enumerate() {
                data[(b * oc + c) * oh * ow + p] = *v;
            }
        }
    }
    ImageBatch::new(z.n, oc, oh, ow, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedConvStudent<T> {
    /// Frozen gate filters; contributes no trainable parameters.
    pub mask_filters: Conv2d<T>,
    pub main_filters: Conv2d<T>,
    /// 1x1 mixing filters.
    pub mix_filters: Conv2d<T>,
}

impl<T: Real> MaskedConvStudent<T> {
    pub fn new(
        mask_filters: Conv2d<T>,
        main_filters: Conv2d<T>,
        mix_filters: Conv2d<T>,
    ) -> Result<Self> {
        let same = mask_filters.in_channels == main_filters.in_channels
            && mask_filters.out_channels == main_filters.out_channels
            && mask_filters.kernel == main_filters.kernel
            && mask_filters.stride == main_filters.stride
            && mask_filters.padding == main_filters.padding;
        if !same {
            return Err(Error::InvalidArgument(
                "mask and main convolutions must produce identical shapes".into(),
            ));
        }
        if mix_filters.kernel != 1 || mix_filters.stride != 1 || mix_filters.padding != 0 {
            return Err(Error::InvalidArgument(
                "mixing convolution must be 1x1".into(),
            ));
        }
        if mix_filters.in_channels != main_filters.out_channels {
            return Err(Error::dims(
                "mix input channels",
                main_filters.out_channels,
                mix_filters.in_channels,
            ));
        }
        Ok(Self {
            mask_filters,
            main_filters,
            mix_filters,
        })
    }

    /// Seeded Gaussian filters for all three banks.
    pub fn gaussian(
        in_channels: usize,
        filters: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        seed: u64,
    ) -> Self {
        Self::new(
            Conv2d::gaussian(
                in_channels,
                filters,
                kernel,
                stride,
                padding,
                rng::substream(seed, 1),
            ),
            Conv2d::gaussian(
                in_channels,
                filters,
                kernel,
                stride,
                padding,
                rng::substream(seed, 2),
            ),
            Conv2d::gaussian(filters, out_channels, 1, 1, 0, rng::substream(seed, 3)),
        )
        .expect("consistent shapes")
    }

    pub fn forward(&self, z: &ImageBatch<T>) -> Result<ImageBatch<T>> {
        let gate = self.mask_filters.forward(z)?;
        let mut main = self.main_filters.forward(z)?;
        for (v, g) in main.data.iter_mut().zip(&gate.data) {
            if *g < T::zero() {
                *v = T::zero();
            }
        }
        self.mix_filters.forward(&main)
    }

    /// Trainable parameters: main and mixing filters only.
    pub fn effective_params(&self) -> usize {
        self.main_filters.param_count() + self.mix_filters.param_count()
    }
}

/// Parameters of the two-convolution ReLU block `conv2(relu(conv1(z)))` with
/// `filters` hidden channels and equal kernels.
pub fn nonconvex_conv_params(
    in_channels: usize,
    filters: usize,
    out_channels: usize,
    kernel: usize,
) -> usize {
    in_channels * filters * kernel * kernel + filters * out_channels * kernel * kernel
}
