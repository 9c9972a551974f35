"""Monthly residential gas consumption forecasting.

Recurrent forecasters (LSTM, GRU), second-order boosted trees and their
averaged BiLSTM + trees hybrid, with RMSE/MAPE/MPE evaluation.
"""

from .errors import DataError, ModelFileError, NumericError

__version__ = "0.1.0"

__all__ = ["DataError", "ModelFileError", "NumericError", "__version__"]
