# Generated by Django 5.2.8

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='EvaluationRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('checkpoint', models.CharField(max_length=1024)),
                ('data_source', models.CharField(max_length=1024)),
                ('error_rate', models.FloatField()),
                ('label', models.CharField(blank=True, db_index=True, max_length=100)),
                ('created', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['created', 'id'],
            },
        ),
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('label', models.CharField(db_index=True, max_length=100)),
                ('config_name', models.CharField(blank=True, max_length=255)),
                ('seed', models.PositiveIntegerField()),
                ('head_kind', models.CharField(max_length=32)),
                ('subset_size', models.PositiveIntegerField(blank=True, null=True)),
                ('test_error', models.FloatField(blank=True, null=True)),
                ('parameters', models.PositiveIntegerField()),
                ('invariance_residual', models.FloatField(blank=True, null=True)),
                ('checkpoint', models.CharField(max_length=1024)),
                ('created', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['created', 'id'],
            },
        ),
    ]
