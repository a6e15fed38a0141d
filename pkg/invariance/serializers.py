from rest_framework import serializers

from .datasets import AUGMENTATIONS, SOURCES, DatasetSpec
from .exceptions import ConfigError
from .heads import HEAD_KINDS
from .network import BACKBONES, HeadConfig, ModelConfig
from .selection import ALGORITHMS, INIT_MODES, SelectionConfig
from .training import DECAY_MODES, OPTIMIZERS, TrainConfig
from .verification import SUITES, VerifyConfig


class StrictSerializer(serializers.Serializer):
    '''rejects keys that are not declared fields, so typos never pass silently'''

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ['unknown key'] for key in unknown})
        return super().to_internal_value(data)


class DataSerializer(StrictSerializer):
    source = serializers.ChoiceField(choices=SOURCES, default='synthetic-shapes')
    image_size = serializers.IntegerField(min_value=8, default=24)
    classes = serializers.IntegerField(min_value=1, default=4)
    train_count = serializers.IntegerField(min_value=1, default=1000)
    test_count = serializers.IntegerField(min_value=1, default=1000)
    train_prefix = serializers.CharField(default='', allow_blank=True)
    test_prefix = serializers.CharField(default='', allow_blank=True)
    augmentation = serializers.ChoiceField(choices=AUGMENTATIONS, default='none')
    subset = serializers.FloatField(min_value=0.0, required=False, allow_null=True, default=None)
    stratified = serializers.BooleanField(default=True)
    seed = serializers.IntegerField(min_value=0, default=0)

    def validate(self, attrs):
        if attrs['source'] == 'idx-files' and not (attrs['train_prefix'] and attrs['test_prefix']):
            raise serializers.ValidationError({'train_prefix': ['idx-files needs train_prefix and test_prefix']})
        subset = attrs.get('subset')
        if subset is not None and subset > 1.0 and not float(subset).is_integer():
            raise serializers.ValidationError({'subset': ['use a fraction in (0, 1] or a whole count']})
        return attrs

    def create(self, validated_data):
        subset = validated_data.get('subset')
        if subset is not None and subset > 1.0:
            validated_data['subset'] = int(subset)
        return DatasetSpec(**validated_data)


class HeadSerializer(StrictSerializer):
    kind = serializers.ChoiceField(choices=HEAD_KINDS, default='monomial')
    monomials = serializers.IntegerField(min_value=1, default=5)
    factors = serializers.IntegerField(min_value=1, default=3)
    distances = serializers.ListField(child=serializers.FloatField(min_value=0.0), min_length=1,
                                      default=lambda: [0.0, 1.0, 2.0])
    init = serializers.ChoiceField(choices=INIT_MODES, default='random')
    positivity = serializers.ChoiceField(choices=('shift', 'none'), default='shift')
    ws_kernel = serializers.IntegerField(min_value=1, default=3)
    out_channels = serializers.IntegerField(min_value=1, default=32)
    mlp_widths = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=1, default=lambda: [32])
    mlp_patch = serializers.IntegerField(min_value=1, default=3)
    mlp_bias = serializers.BooleanField(default=True)
    sa_channels = serializers.IntegerField(min_value=1, default=16)
    sa_heads = serializers.IntegerField(min_value=1, default=1)
    attention_dropout = serializers.FloatField(min_value=0.0, max_value=0.99, default=0.0)

    def validate_ws_kernel(self, value):
        if value % 2 == 0:
            raise serializers.ValidationError('must be odd')
        return value

    def validate_mlp_patch(self, value):
        if value % 2 == 0:
            raise serializers.ValidationError('must be odd')
        return value

    def validate(self, attrs):
        if attrs['sa_channels'] % attrs['sa_heads']:
            raise serializers.ValidationError({'sa_heads': [f"{attrs['sa_heads']} heads do not divide "
                                                            f"{attrs['sa_channels']} channels"]})
        return attrs

    def create(self, validated_data):
        return HeadConfig(**validated_data)


class ModelSerializer(StrictSerializer):
    backbone = serializers.ChoiceField(choices=BACKBONES, default='steerable')
    in_channels = serializers.IntegerField(min_value=1, default=1)
    image_size = serializers.IntegerField(min_value=1, default=24)
    classes = serializers.IntegerField(min_value=2, default=4)
    channels = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=1,
                                     default=lambda: [16, 32, 32])
    kernel_size = serializers.IntegerField(min_value=1, default=3)
    n_alpha = serializers.IntegerField(min_value=1, default=8)
    n_f = serializers.IntegerField(min_value=1, default=16)
    pool_after = serializers.ListField(child=serializers.IntegerField(min_value=0), default=lambda: [0])
    batch_norm = serializers.BooleanField(default=False)
    head = HeadSerializer(default=dict)
    dense = serializers.ListField(child=serializers.IntegerField(min_value=1), default=lambda: [90])
    dropout = serializers.FloatField(min_value=0.0, max_value=0.99, default=0.0)
    rescale = serializers.BooleanField(default=False)

    def validate_kernel_size(self, value):
        if value % 2 == 0:
            raise serializers.ValidationError('must be odd')
        return value

    def create(self, validated_data):
        head = validated_data.pop('head') or HeadSerializer().run_validation({})
        return ModelConfig(head=HeadConfig(**head), **validated_data)


class TrainSerializer(StrictSerializer):
    optimizer = serializers.ChoiceField(choices=OPTIMIZERS, default='adam')
    learning_rate = serializers.FloatField(min_value=0.0, default=1e-3)
    decay = serializers.ChoiceField(choices=DECAY_MODES, default='exponential')
    decay_factor = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.9)
    decay_epoch = serializers.FloatField(min_value=1e-9, default=1.0)
    batch_size = serializers.IntegerField(min_value=1, default=64)
    epochs = serializers.IntegerField(min_value=0, default=30)
    iterations = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)
    elastic_net = serializers.FloatField(min_value=0.0, default=1e-7)
    elastic_alpha = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.5)
    weight_decay = serializers.FloatField(min_value=0.0, default=0.0)
    reg_constant = serializers.FloatField(min_value=0.0, default=1.0)
    momentum = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.9)
    precision = serializers.ChoiceField(choices=(32, 64), default=32)
    smoke_threshold = serializers.FloatField(min_value=0.0, max_value=1.0, required=False, allow_null=True,
                                             default=None)
    seed = serializers.IntegerField(min_value=0, default=0)

    def create(self, validated_data):
        return TrainConfig(**validated_data)


class SelectionSerializer(StrictSerializer):
    pool = serializers.IntegerField(min_value=1, default=50)
    target = serializers.IntegerField(min_value=1, default=5)
    init = serializers.ChoiceField(choices=INIT_MODES, default='random')
    algorithm = serializers.ChoiceField(choices=ALGORITHMS, default='magnitude')
    pretrain_epochs = serializers.IntegerField(min_value=0, default=10)
    schedule = serializers.ListField(
        child=serializers.ListField(child=serializers.IntegerField(min_value=0), min_length=2, max_length=2),
        default=list,
    )
    keep_fraction = serializers.FloatField(required=False, allow_null=True, default=None)
    iterative = serializers.BooleanField(default=True)
    seed = serializers.IntegerField(min_value=0, default=0)

    def validate(self, attrs):
        config = SelectionConfig(**{**attrs, 'schedule': [tuple(s) for s in attrs['schedule']]})
        try:
            config.validate()
        except ConfigError as exc:
            raise serializers.ValidationError({exc.field.split('.')[-1]: [str(exc).split(': ', 1)[-1]]})
        return attrs

    def create(self, validated_data):
        validated_data['schedule'] = [tuple(s) for s in validated_data['schedule']]
        return SelectionConfig(**validated_data)


class VerifySerializer(StrictSerializer):
    suite = serializers.ChoiceField(choices=SUITES + ('all',), default='all')
    n_alpha = serializers.IntegerField(min_value=1, default=4)
    precision = serializers.ChoiceField(choices=(32, 64), default=64)
    samples = serializers.IntegerField(min_value=1, default=20)
    seed = serializers.IntegerField(min_value=0, default=0)

    def create(self, validated_data):
        return VerifyConfig(**validated_data)


SECTIONS = {
    'data': DataSerializer,
    'model': ModelSerializer,
    'train': TrainSerializer,
    'selection': SelectionSerializer,
    'verify': VerifySerializer,
}


class RunConfigSerializer(StrictSerializer):
    data = DataSerializer(default=dict)
    model = ModelSerializer(default=dict)
    train = TrainSerializer(default=dict)
    selection = SelectionSerializer(required=False)
    verify = VerifySerializer(required=False)

    def create(self, validated_data):
        from .config import RunConfig
        sections = {}
        for name, serializer_class in SECTIONS.items():
            if name not in validated_data:
                continue
            serializer = serializer_class()
            values = validated_data[name]
            if not values:
                values = serializer.run_validation({})
            sections[name] = serializer.create(dict(values))
        return RunConfig(**sections)
