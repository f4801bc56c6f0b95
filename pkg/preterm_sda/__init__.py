"""Preterm EEG seizure detection: preprocessing, a fully convolutional detector, GA-weighted transfer
learning, classifier fusion and epoch/event evaluation."""
