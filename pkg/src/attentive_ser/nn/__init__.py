from .attention import attention_pool_backward, attention_pool_forward
from .gradcheck import numerical_gradient, relative_error
from .layers import (
    ShapeError,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    dense_softmax_xent,
    dense_softmax_xent_backward,
    elu,
    elu_backward,
    elu_forward,
    maxpool_backward,
    maxpool_forward,
    softmax,
)
from .optim import AdamState, adam_step
from .recurrent import lstm_backward, lstm_forward, lstm_step, sigmoid
