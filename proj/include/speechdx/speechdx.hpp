#pragma once

// Every public header of the library. The CLI layer is separate because it also needs
// zlib and OpenSSL at link time: include "speechdx/cli/commands.hpp" for that.

#include "speechdx/audio_model.hpp"
#include "speechdx/bpe.hpp"
#include "speechdx/chat.hpp"
#include "speechdx/corpus.hpp"
#include "speechdx/dataset.hpp"
#include "speechdx/error.hpp"
#include "speechdx/fusion.hpp"
#include "speechdx/metrics.hpp"
#include "speechdx/nn/autograd.hpp"
#include "speechdx/nn/checkpoint.hpp"
#include "speechdx/nn/layers.hpp"
#include "speechdx/nn/lr_range.hpp"
#include "speechdx/nn/optim.hpp"
#include "speechdx/nn/params.hpp"
#include "speechdx/nn/tensor.hpp"
#include "speechdx/rng.hpp"
#include "speechdx/sweep.hpp"
#include "speechdx/synthetic.hpp"
#include "speechdx/text_model.hpp"
#include "speechdx/train_config.hpp"
